import os

_TRUTHY = {"true", "1", "t"}

_RIFL_THREADS = int(os.getenv("RIFL_THREADS", "0") or "0")
_LOG_LEVEL = os.getenv("RIFL_LOG_LEVEL", "WARNING").upper()
_CACHE_ENABLED = os.getenv("RIFL_CACHE", "False").lower() in _TRUTHY


def max_workers() -> int:
    """Worker cap for replication and bootstrap pools."""
    available = os.cpu_count() or 1
    if _RIFL_THREADS > 0:
        return min(_RIFL_THREADS, available)
    return available

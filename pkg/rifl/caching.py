import shutil
from pathlib import Path

_set_cache_dir = None


def set_cache_dir(path: Path):
    """
    Sets the directory holding the replication cache. Experiments already
    running keep the directory they started with.
    """
    global _set_cache_dir
    path = Path(path)
    if path.exists():
        _verify_looks_like_cache_dir(path)
    path.mkdir(parents=True, exist_ok=True)
    _set_cache_dir = path


def _verify_looks_like_cache_dir(path: Path):
    for file_or_directory in path.rglob("*"):
        if file_or_directory.is_file() and file_or_directory.suffix in (
            ".py",
            ".txt",
            ".md",
            ".csv",
        ):
            msg = (
                "Attempting to set cache directory to what appears to be a "
                "source or data directory. Instead set it to its own "
                "subdirectory."
            )
            raise ValueError(msg)


def cache_dir() -> Path:
    if _set_cache_dir is not None:
        return _set_cache_dir
    return Path.cwd() / ".rifl_cache"


def clear_cache_dir():
    if cache_dir().exists():
        shutil.rmtree(cache_dir())

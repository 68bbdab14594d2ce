"""
SQLite store of finished simulation replications, so an interrupted
experiment resumes where it stopped. Each thread keeps its own connection.
"""

import base64
import datetime
import json
import sqlite3
import threading
from pathlib import Path

import xxhash

from rifl.caching import cache_dir
from rifl.utils import canonical_dumps

thread_local = threading.local()


def replication_key(description: dict, replication: int) -> str:
    """xxhash64 of the canonical experiment description, plus the replication index."""
    hasher = xxhash.xxh64()
    hasher.update(canonical_dumps(description).encode())
    digest = base64.b64encode(hasher.digest()).decode()
    return f"{digest}:{replication}"


class ReplicationCache:
    def __init__(self, path: Path | None = None):
        self._path = Path(path) if path is not None else cache_dir() / "replications.db"
        self._create_tables()

    @property
    def path(self) -> Path:
        return self._path

    def _connection(self) -> sqlite3.Connection:
        connections = getattr(thread_local, "connections", None)
        if connections is None:
            connections = thread_local.connections = {}
        conn = connections.get(self._path)
        if conn is None or not self._path.exists():
            conn = sqlite3.connect(self._path, isolation_level=None)
            connections[self._path] = conn
        return conn

    def _execute(self, query: str, params: tuple = (), fetchone: bool = False):
        cursor = self._connection().cursor()
        cursor.execute(query, params)
        if fetchone:
            return cursor.fetchone()
        return cursor

    def _create_tables(self):
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._execute(
            """
            CREATE TABLE IF NOT EXISTS Replications (
                cache_key TEXT PRIMARY KEY,
                record TEXT NOT NULL,
                date_added TEXT
            );
            """,
        )

    def get(self, key: str) -> dict | None:
        row = self._execute(
            "SELECT record FROM Replications WHERE cache_key = ?",
            (key,),
            fetchone=True,
        )
        if row is None:
            return None
        return json.loads(row[0])

    def put(self, key: str, record: dict):
        self._execute(
            "INSERT OR REPLACE INTO Replications (cache_key, record, date_added) "
            "VALUES (?, ?, ?)",
            (key, canonical_dumps(record), datetime.datetime.now().isoformat()),
        )

    def delete(self, key: str) -> bool:
        cursor = self._execute("DELETE FROM Replications WHERE cache_key = ?", (key,))
        return cursor.rowcount > 0

    def __contains__(self, key: str) -> bool:
        row = self._execute(
            "SELECT 1 FROM Replications WHERE cache_key = ?",
            (key,),
            fetchone=True,
        )
        return row is not None

    def __len__(self) -> int:
        return self._execute("SELECT COUNT(*) FROM Replications", fetchone=True)[0]

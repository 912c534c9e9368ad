"""SQLite caching of trained model parameters to avoid retraining."""

import json
import os
import sqlite3
from datetime import datetime, timedelta
from pathlib import Path
from typing import List, Optional, Tuple

from .config import CACHE_DIR_ENV_VAR
from .models import LossBreakdown, ModelParams


class ParamsCache:
    """Cache trained parameters and their loss history in a SQLite database."""

    def __init__(self, cache_dir: str = None, ttl_days: int = 30):
        """
        Initialize cache.

        Args:
            cache_dir: Directory for the cache database. Defaults to $MESHDIFF_CACHE_DIR,
                then ~/.meshdiff, then ./.meshdiff
            ttl_days: Time-to-live for cache entries in days
        """
        if cache_dir is None:
            cache_dir = os.environ.get(CACHE_DIR_ENV_VAR) or None
        if cache_dir is None:
            home_cache = os.path.join(Path.home(), ".meshdiff")
            try:
                Path(home_cache).mkdir(parents=True, exist_ok=True)
                cache_dir = home_cache
            except (PermissionError, OSError):
                cache_dir = os.path.join(os.getcwd(), ".meshdiff")

        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        self.db_path = os.path.join(cache_dir, "cache.db")
        self.ttl_days = ttl_days
        self._init_db()

    def _init_db(self):
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS params_cache (
                    cache_key TEXT PRIMARY KEY,
                    params_json TEXT NOT NULL,
                    history_json TEXT NOT NULL,
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                    model_kind TEXT,
                    sample_name TEXT
                )
            """)
            conn.execute("""
                CREATE INDEX IF NOT EXISTS idx_params_created_at
                ON params_cache(created_at)
            """)
            conn.commit()

    def _cutoff(self) -> str:
        return (datetime.now() - timedelta(days=self.ttl_days)).isoformat()

    def get(self, key: str) -> Optional[Tuple[ModelParams, List[LossBreakdown]]]:
        """
        Get cached parameters.

        Args:
            key: Digest of (sample, model config, train config)

        Returns:
            (params, loss history) if found and not expired, None otherwise
        """
        with sqlite3.connect(self.db_path) as conn:
            row = conn.execute(
                """
                SELECT params_json, history_json FROM params_cache
                WHERE cache_key = ? AND created_at > ?
                """,
                (key, self._cutoff()),
            ).fetchone()

        if row is None:
            return None
        params = ModelParams.from_json(json.loads(row[0]))
        history = [LossBreakdown(**item) for item in json.loads(row[1])]
        return params, history

    def set(
        self,
        key: str,
        params: ModelParams,
        history: List[LossBreakdown],
        sample_name: str = "",
    ) -> None:
        """Store trained parameters and their loss history."""
        history_json = json.dumps([h.model_dump() for h in history])
        with sqlite3.connect(self.db_path) as conn:
            conn.execute(
                """
                INSERT OR REPLACE INTO params_cache
                (cache_key, params_json, history_json, created_at, model_kind, sample_name)
                VALUES (?, ?, ?, ?, ?, ?)
                """,
                (
                    key,
                    params.to_json(),
                    history_json,
                    datetime.now().isoformat(),
                    params.kind.value,
                    sample_name[:500],
                ),
            )
            conn.commit()

    def clear(self) -> int:
        """
        Clear all cache entries.

        Returns:
            Number of entries cleared
        """
        with sqlite3.connect(self.db_path) as conn:
            count = conn.execute("SELECT COUNT(*) FROM params_cache").fetchone()[0]
            conn.execute("DELETE FROM params_cache")
            conn.commit()
            return count

    def clear_expired(self) -> int:
        """Clear expired entries; returns how many were removed."""
        cutoff = self._cutoff()
        with sqlite3.connect(self.db_path) as conn:
            count = conn.execute(
                "SELECT COUNT(*) FROM params_cache WHERE created_at <= ?", (cutoff,)
            ).fetchone()[0]
            conn.execute("DELETE FROM params_cache WHERE created_at <= ?", (cutoff,))
            conn.commit()
            return count

    def stats(self) -> dict:
        with sqlite3.connect(self.db_path) as conn:
            total = conn.execute("SELECT COUNT(*) FROM params_cache").fetchone()[0]
            valid = conn.execute(
                "SELECT COUNT(*) FROM params_cache WHERE created_at > ?", (self._cutoff(),)
            ).fetchone()[0]
            by_kind = dict(
                conn.execute(
                    "SELECT model_kind, COUNT(*) FROM params_cache GROUP BY model_kind"
                ).fetchall()
            )

        return {
            "total_entries": total,
            "valid_entries": valid,
            "expired_entries": total - valid,
            "by_kind": by_kind,
            "db_path": self.db_path,
            "ttl_days": self.ttl_days,
        }

#!/usr/bin/env python3
"""
activity_log.py - SQLite Run Ledger

WHY THIS SCRIPT EXISTS:
- Keeps a durable record of every CLI run (what ran, when, and whether it finished)
- Lets a long grid search or evaluation be audited after the terminal output is gone

KEY ARCHITECTURAL DECISIONS:
- URI MODE: connections use file:...?mode=rwc so the database is created on first use
- NEVER FAILS A RUN: ledger errors are logged as warnings and swallowed
"""

import json
import logging
import sqlite3
import uuid
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

logger = logging.getLogger(__name__)

STATUSES = ("STARTED", "COMPLETED", "FAILED")

_SCHEMA = """
    CREATE TABLE IF NOT EXISTS activity (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        timestamp DATETIME DEFAULT CURRENT_TIMESTAMP,
        run_id TEXT NOT NULL,
        command TEXT NOT NULL,
        status TEXT NOT NULL CHECK(status IN ('STARTED', 'COMPLETED', 'FAILED')),
        details TEXT
    )
"""


def create_activity_db(db_path: Union[str, Path]) -> Path:
    """Create the activity table if it does not exist yet."""
    db_path = Path(db_path)
    db_path.parent.mkdir(parents=True, exist_ok=True)
    with sqlite3.connect(f"file:{db_path}?mode=rwc", uri=True) as conn:
        conn.execute(_SCHEMA)
        conn.commit()
    return db_path


class ActivityLog:
    """
    Ledger of CLI runs in logs/activity.db.

    A disabled ledger accepts every call and writes nothing.
    """

    def __init__(self, db_path: Union[str, Path], enabled: bool = True):
        self.db_path = Path(db_path)
        self.enabled = enabled
        self.run_id = uuid.uuid4().hex[:12]
        if self.enabled:
            try:
                create_activity_db(self.db_path)
            except (sqlite3.Error, OSError) as e:
                logger.warning(f"Activity ledger disabled, cannot open {self.db_path}: {e}")
                self.enabled = False

    def log_event(self, command: str, status: str, details: Optional[Dict[str, Any]] = None) -> None:
        if status not in STATUSES:
            raise ValueError(f"Unknown activity status '{status}'")
        if not self.enabled:
            return
        try:
            with sqlite3.connect(f"file:{self.db_path}?mode=rw", uri=True) as conn:
                conn.execute(
                    "INSERT INTO activity (run_id, command, status, details) VALUES (?, ?, ?, ?)",
                    (self.run_id, command, status, json.dumps(details or {}, sort_keys=True, default=str)),
                )
                conn.commit()
        except sqlite3.Error as e:
            logger.warning(f"Failed to log activity event: {e}")

    def events(self, run_id: Optional[str] = None) -> List[Dict[str, Any]]:
        """Rows of one run (this one by default), oldest first."""
        if not self.db_path.exists():
            return []
        with sqlite3.connect(f"file:{self.db_path}?mode=ro", uri=True) as conn:
            conn.row_factory = sqlite3.Row
            rows = conn.execute(
                "SELECT run_id, command, status, details FROM activity WHERE run_id = ? ORDER BY id",
                (run_id or self.run_id,),
            ).fetchall()
        return [{**dict(row), "details": json.loads(row["details"] or "{}")} for row in rows]

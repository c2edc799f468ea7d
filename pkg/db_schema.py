"""Database schema for the results store."""

import sqlite3
from pathlib import Path

DB_NAME = "kan_lab.db"


def create_schema(conn: sqlite3.Connection) -> None:
    """Create the database schema."""
    cursor = conn.cursor()

    # One row per CLI invocation
    cursor.execute("""
        CREATE TABLE IF NOT EXISTS run (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            subcommand TEXT NOT NULL,
            stage TEXT,
            config_hash TEXT NOT NULL,
            map_fingerprint TEXT,
            seed INTEGER NOT NULL,
            workers INTEGER NOT NULL,
            exit_status INTEGER,
            started_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
        )
    """)

    # Reports produced by a run (validators, certificates, statistics)
    cursor.execute("""
        CREATE TABLE IF NOT EXISTS report (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id INTEGER NOT NULL,
            name TEXT NOT NULL,
            passed INTEGER,
            body TEXT NOT NULL,
            FOREIGN KEY (run_id) REFERENCES run(id)
        )
    """)

    # Files written by a run
    cursor.execute("""
        CREATE TABLE IF NOT EXISTS artifact (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id INTEGER NOT NULL,
            path TEXT NOT NULL,
            sha256 TEXT NOT NULL,
            FOREIGN KEY (run_id) REFERENCES run(id),
            UNIQUE(run_id, path)
        )
    """)

    cursor.execute("CREATE INDEX IF NOT EXISTS idx_report_run ON report(run_id)")
    cursor.execute("CREATE INDEX IF NOT EXISTS idx_artifact_run ON artifact(run_id)")
    cursor.execute("CREATE INDEX IF NOT EXISTS idx_run_config ON run(config_hash)")

    conn.commit()


def migrate_run_elapsed(conn: sqlite3.Connection) -> None:
    """Add wall-clock duration to run for stores created before it was recorded."""
    cursor = conn.cursor()
    cursor.execute("PRAGMA table_info(run)")
    columns = [row[1] for row in cursor.fetchall()]
    if "elapsed_s" not in columns:
        cursor.execute("ALTER TABLE run ADD COLUMN elapsed_s REAL")
        conn.commit()


def migrate_report_failures(conn: sqlite3.Connection) -> None:
    """Add the comma-separated list of failed gating checks to report."""
    cursor = conn.cursor()
    cursor.execute("PRAGMA table_info(report)")
    columns = [row[1] for row in cursor.fetchall()]
    if "failed_checks" not in columns:
        cursor.execute("ALTER TABLE report ADD COLUMN failed_checks TEXT")
        conn.commit()


def init_db(db_path: Path) -> sqlite3.Connection:
    """Initialize database and return connection."""
    db_path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(db_path)
    conn.row_factory = sqlite3.Row
    create_schema(conn)
    migrate_run_elapsed(conn)
    migrate_report_failures(conn)
    return conn


def record_run(
    conn: sqlite3.Connection,
    subcommand: str,
    config_hash: str,
    seed: int,
    workers: int,
    stage: str | None = None,
    map_fingerprint: str | None = None,
) -> int:
    cursor = conn.execute(
        "INSERT INTO run (subcommand, stage, config_hash, map_fingerprint, seed, workers) VALUES (?, ?, ?, ?, ?, ?)",
        (subcommand, stage, config_hash, map_fingerprint, seed, workers),
    )
    conn.commit()
    return int(cursor.lastrowid)


def finish_run(conn: sqlite3.Connection, run_id: int, exit_status: int, elapsed_s: float) -> None:
    conn.execute("UPDATE run SET exit_status = ?, elapsed_s = ? WHERE id = ?", (exit_status, elapsed_s, run_id))
    conn.commit()


def record_report(
    conn: sqlite3.Connection, run_id: int, name: str, body: str, passed: bool | None, failed_checks: list[str] | None = None
) -> None:
    conn.execute(
        "INSERT INTO report (run_id, name, passed, body, failed_checks) VALUES (?, ?, ?, ?, ?)",
        (run_id, name, None if passed is None else int(passed), body, ",".join(failed_checks) if failed_checks else None),
    )
    conn.commit()


def record_artifact(conn: sqlite3.Connection, run_id: int, path: str, sha256: str) -> None:
    conn.execute(
        "INSERT OR REPLACE INTO artifact (run_id, path, sha256) VALUES (?, ?, ?)",
        (run_id, path, sha256),
    )
    conn.commit()


if __name__ == "__main__":
    path = Path(__file__).parent / DB_NAME
    conn = init_db(path)
    print(f"Database created at {path}")
    conn.close()

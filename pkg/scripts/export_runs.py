#!/usr/bin/env python3
"""Export the run store from SQLite to JSON for plotting and comparison."""

import argparse
import json
import sqlite3
import sys
from pathlib import Path

DB_PATH = Path(__file__).parent.parent / "out" / "kan_lab.db"
OUT_PATH = Path(__file__).parent.parent / "out" / "runs.json"


def export(db_path: Path = DB_PATH, out_path: Path = OUT_PATH) -> dict:
    conn = sqlite3.connect(db_path)
    conn.row_factory = sqlite3.Row
    c = conn.cursor()

    data: dict = {}

    # --- Runs ---
    c.execute("SELECT * FROM run ORDER BY id")
    runs = [dict(r) for r in c.fetchall()]

    # --- Reports and artifacts, grouped per run ---
    c.execute("SELECT run_id, name, passed, body, failed_checks FROM report ORDER BY id")
    reports: dict[int, list] = {}
    for r in c.fetchall():
        reports.setdefault(r["run_id"], []).append(
            {
                "name": r["name"],
                "passed": None if r["passed"] is None else bool(r["passed"]),
                "failed_checks": r["failed_checks"].split(",") if r["failed_checks"] else [],
                "body": r["body"],
            }
        )
    c.execute("SELECT run_id, path, sha256 FROM artifact ORDER BY id")
    artifacts: dict[int, list] = {}
    for r in c.fetchall():
        artifacts.setdefault(r["run_id"], []).append({"path": r["path"], "sha256": r["sha256"]})

    for run in runs:
        run["reports"] = reports.get(run["id"], [])
        run["artifacts"] = artifacts.get(run["id"], [])
    data["runs"] = runs

    # --- Summary ---
    c.execute("SELECT subcommand, COUNT(*) AS count FROM run GROUP BY subcommand")
    data["runs_by_subcommand"] = {r["subcommand"]: r["count"] for r in c.fetchall()}
    c.execute("""
        SELECT name, SUM(passed = 1) AS passed, SUM(passed = 0) AS failed
        FROM report WHERE passed IS NOT NULL GROUP BY name
    """)
    data["report_outcomes"] = {r["name"]: {"passed": r["passed"], "failed": r["failed"]} for r in c.fetchall()}

    # Runs whose map fingerprint disagrees across identical configurations
    c.execute("""
        SELECT config_hash, COUNT(DISTINCT map_fingerprint) AS n
        FROM run WHERE map_fingerprint IS NOT NULL
        GROUP BY config_hash HAVING n > 1
    """)
    data["inconsistent_configs"] = [r["config_hash"] for r in c.fetchall()]

    conn.close()

    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as f:
        json.dump(data, f, indent=2)

    return data


def main() -> int:
    parser = argparse.ArgumentParser(description="Export the run store to JSON")
    parser.add_argument("--db", type=Path, default=DB_PATH, help="SQLite run store")
    parser.add_argument("--out", type=Path, default=OUT_PATH, help="JSON output path")
    args = parser.parse_args()

    if not args.db.is_file():
        print(f"Database not found: {args.db}")
        return 2
    data = export(args.db, args.out)
    print(f"Exported {len(data['runs'])} runs to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

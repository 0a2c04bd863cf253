import sqlite3
import json
from datetime import datetime
from typing import Optional
import os

# Get the database directory (two levels up from src/functions/)
FUNCTIONS_DIR = os.path.dirname(os.path.abspath(__file__))
SRC_DIR = os.path.dirname(FUNCTIONS_DIR)
PROJECT_ROOT = os.path.dirname(SRC_DIR)
DB_DIR = os.path.join(PROJECT_ROOT, "database")
DB_PATH = os.path.join(DB_DIR, "afc_runs.db")

def init_db(db_path: str = DB_PATH) -> sqlite3.Connection:
    """
    Initialize the SQLite run ledger and create the table if it doesn't exist.

    Args:
        db_path: Path to the SQLite database file

    Returns:
        Connection to the database
    """
    directory = os.path.dirname(os.path.abspath(db_path))
    os.makedirs(directory, exist_ok=True)
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    cursor.execute("""
        CREATE TABLE IF NOT EXISTS scenario_runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            timestamp TEXT NOT NULL,
            scenario_name TEXT NOT NULL,
            scenario_hash TEXT NOT NULL,
            command TEXT NOT NULL,
            status TEXT NOT NULL,
            sweep_parameter TEXT DEFAULT '',
            sweep_value REAL,
            efficiency REAL,
            echo_time_s REAL,
            fit_delta_hz REAL,
            fit_gamma_hz REAL,
            fit_d REAL,
            fit_d0 REAL,
            bandwidth_hz REAL,
            runtime_s REAL,
            output_dir TEXT DEFAULT '',
            summary TEXT DEFAULT ''
        )
    """)

    conn.commit()
    return conn

def insert_run(
    scenario_name: str,
    scenario_hash: str,
    command: str,
    status: str,
    sweep_parameter: Optional[str] = None,
    sweep_value: Optional[float] = None,
    efficiency: Optional[float] = None,
    echo_time_s: Optional[float] = None,
    fit: Optional[dict] = None,
    runtime_s: Optional[float] = None,
    output_dir: Optional[str] = None,
    summary: Optional[dict] = None,
    timestamp: Optional[str] = None,
    db_path: str = DB_PATH
) -> int:
    """
    Insert a scenario run record into the ledger.

    Args:
        scenario_name: Scenario name from the config file
        scenario_hash: 12-hex-digit scenario hash
        command: CLI command that produced the run (run, sweep)
        status: ok, or the name of the failing stage
        sweep_parameter: Swept parameter name for sweep points
        sweep_value: Swept parameter value
        efficiency: Echo efficiency of the main window
        echo_time_s: Refined echo peak time
        fit: CombParams.as_dict() of the fitted comb (keys delta_hz, gamma_hz, d, d0, bandwidth_hz)
        runtime_s: Wall-clock time of the run
        output_dir: Directory holding the artifacts
        summary: Extra values stored as JSON
        timestamp: Timestamp (ISO format). If None, uses current time
        db_path: Path to the SQLite database file

    Returns:
        ID of the inserted record
    """
    if timestamp is None:
        timestamp = datetime.now().isoformat()
    fit = fit or {}

    conn = init_db(db_path)
    cursor = conn.cursor()

    cursor.execute("""
        INSERT INTO scenario_runs
        (timestamp, scenario_name, scenario_hash, command, status, sweep_parameter, sweep_value,
         efficiency, echo_time_s, fit_delta_hz, fit_gamma_hz, fit_d, fit_d0, bandwidth_hz,
         runtime_s, output_dir, summary)
        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
    """, (
        timestamp,
        scenario_name,
        scenario_hash,
        command,
        status,
        sweep_parameter or '',
        sweep_value,
        efficiency,
        echo_time_s,
        fit.get("delta_hz"),
        fit.get("gamma_hz"),
        fit.get("d"),
        fit.get("d0"),
        fit.get("bandwidth_hz"),
        runtime_s,
        output_dir or '',
        json.dumps(summary or {}, sort_keys=True, default=float),
    ))

    record_id = cursor.lastrowid
    conn.commit()
    conn.close()

    return record_id

def get_recent_runs(
    limit: int = 10,
    scenario_name: Optional[str] = None,
    db_path: str = DB_PATH
) -> list:
    """
    Retrieve recent runs from the ledger.

    Args:
        limit: Maximum number of records to retrieve
        scenario_name: Optional filter by scenario name
        db_path: Path to the SQLite database file

    Returns:
        List of dictionaries containing run records, newest first
    """
    conn = init_db(db_path)
    conn.row_factory = sqlite3.Row
    cursor = conn.cursor()

    if scenario_name:
        cursor.execute("""
            SELECT * FROM scenario_runs
            WHERE scenario_name = ?
            ORDER BY timestamp DESC, id DESC
            LIMIT ?
        """, (scenario_name, limit))
    else:
        cursor.execute("""
            SELECT * FROM scenario_runs
            ORDER BY timestamp DESC, id DESC
            LIMIT ?
        """, (limit,))

    rows = cursor.fetchall()
    conn.close()

    return [dict(row) for row in rows]

def get_runs_by_hash(
    scenario_hash: str,
    db_path: str = DB_PATH
) -> list:
    """
    Retrieve every run of one exact scenario configuration.

    Args:
        scenario_hash: Scenario hash (full 12 digits)
        db_path: Path to the SQLite database file

    Returns:
        List of dictionaries ordered by timestamp, oldest first
    """
    conn = init_db(db_path)
    conn.row_factory = sqlite3.Row
    cursor = conn.cursor()

    cursor.execute("""
        SELECT * FROM scenario_runs
        WHERE scenario_hash = ?
        ORDER BY timestamp ASC, id ASC
    """, (scenario_hash,))

    rows = cursor.fetchall()
    conn.close()

    return [dict(row) for row in rows]

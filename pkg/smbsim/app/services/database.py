from __future__ import annotations

import sqlite3
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator


PROJECT_ROOT = Path(__file__).resolve().parents[3]

DATA_DIR = PROJECT_ROOT / "data"
DATABASE_PATH = DATA_DIR / "smbsim.db"

SCHEMA_PATH = PROJECT_ROOT / "smbsim" / "db" / "schema.sql"
SCHEMA_VERSION = "1"

# Ensemble runs started side by side may record at the same moment.
BUSY_TIMEOUT_S = 10.0


class RegistryVersionError(sqlite3.DatabaseError):
    pass


def connect(database_path: Path = DATABASE_PATH) -> sqlite3.Connection:
    """
    Registry connection: waits on a locked file instead of failing, rows by name.
    """
    connection = sqlite3.connect(database_path, timeout=BUSY_TIMEOUT_S)
    connection.row_factory = sqlite3.Row
    return connection


@contextmanager
def open_registry(database_path: Path = DATABASE_PATH) -> Iterator[sqlite3.Connection]:
    connection = connect(database_path)

    try:
        yield connection
        connection.commit()
    except Exception:
        connection.rollback()
        raise
    finally:
        connection.close()


def initialize_database(
    database_path: Path = DATABASE_PATH,
    schema_path: Path = SCHEMA_PATH,
) -> None:
    """
    Create the registry file and apply schema.sql.

    Safe before every recorded run. A registry written by another schema
    version is refused rather than migrated.
    """
    Path(database_path).parent.mkdir(parents=True, exist_ok=True)

    if not schema_path.exists():
        raise FileNotFoundError(f"Schema file not found: {schema_path}")

    with open_registry(database_path) as registry:
        registry.executescript(schema_path.read_text(encoding="utf-8"))

    version = registry_settings(database_path).get("schema_version")

    if version != SCHEMA_VERSION:
        raise RegistryVersionError(
            f"Run registry {database_path} has schema version {version}, expected {SCHEMA_VERSION}."
        )


def registry_tables(database_path: Path = DATABASE_PATH) -> list[str]:
    with open_registry(database_path) as registry:
        rows = registry.execute(
            """
            SELECT name
            FROM sqlite_master
            WHERE type = 'table'
              AND name NOT LIKE 'sqlite_%'
            ORDER BY name;
            """
        ).fetchall()

    return [row["name"] for row in rows]


def registry_settings(database_path: Path = DATABASE_PATH) -> dict[str, str | None]:
    with open_registry(database_path) as registry:
        rows = registry.execute(
            "SELECT setting_key, setting_value FROM app_settings ORDER BY setting_key;"
        ).fetchall()

    return {row["setting_key"]: row["setting_value"] for row in rows}


def count_runs(database_path: Path = DATABASE_PATH) -> int:
    with open_registry(database_path) as registry:
        row = registry.execute("SELECT COUNT(*) AS total FROM runs;").fetchone()

    return int(row["total"])


def runs_by_status(database_path: Path = DATABASE_PATH) -> dict[tuple[str, str], int]:
    """
    Number of recorded runs per (mode, status).
    """
    with open_registry(database_path) as registry:
        rows = registry.execute(
            """
            SELECT mode, status, COUNT(*) AS total
            FROM runs
            GROUP BY mode, status
            ORDER BY mode, status;
            """
        ).fetchall()

    return {(row["mode"], row["status"]): int(row["total"]) for row in rows}


def print_database_status(database_path: Path = DATABASE_PATH) -> None:
    print(f"Registry: {database_path}")
    print(f"Schema:   {SCHEMA_PATH} (version {registry_settings(database_path).get('schema_version')})")
    print(f"Tables:   {', '.join(registry_tables(database_path))}")
    print()
    print(f"Recorded runs: {count_runs(database_path)}")

    for (mode, status), total in runs_by_status(database_path).items():
        print(f"  - {mode:<10} {status:<13} {total}")

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from smbsim.app.services.database import DATABASE_PATH, initialize_database, open_registry


@dataclass(frozen=True)
class RunRecord:
    run_id: int
    created_at: str
    mode: str
    config_path: str | None
    config_sha256: str
    seed: int
    status: str
    exit_code: int
    output_dir: str | None
    wall_time_s: float | None


def record_run(
    mode: str,
    config_sha256: str,
    seed: int,
    status: str,
    exit_code: int,
    config_path: str | None = None,
    output_dir: str | None = None,
    wall_time_s: float | None = None,
    database_path: Path = DATABASE_PATH,
) -> int:
    initialize_database(database_path)

    with open_registry(database_path) as registry:
        cursor = registry.execute(
            """
            INSERT INTO runs (
                mode,
                config_path,
                config_sha256,
                seed,
                status,
                exit_code,
                output_dir,
                wall_time_s
            )
            VALUES (?, ?, ?, ?, ?, ?, ?, ?);
            """,
            (
                mode,
                config_path,
                config_sha256,
                # uint64 seeds do not fit SQLite's signed integer.
                str(seed),
                status,
                exit_code,
                output_dir,
                wall_time_s,
            ),
        )

        return int(cursor.lastrowid)


def list_runs(database_path: Path = DATABASE_PATH, limit: int | None = None) -> list[RunRecord]:
    query = """
        SELECT
            run_id,
            created_at,
            mode,
            config_path,
            config_sha256,
            seed,
            status,
            exit_code,
            output_dir,
            wall_time_s
        FROM runs
        ORDER BY run_id DESC
    """
    parameters: tuple[int, ...] = ()

    if limit is not None:
        query += " LIMIT ?"
        parameters = (limit,)

    with open_registry(database_path) as registry:
        rows = registry.execute(query + ";", parameters).fetchall()

    return [
        RunRecord(
            run_id=row["run_id"],
            created_at=row["created_at"],
            mode=row["mode"],
            config_path=row["config_path"],
            config_sha256=row["config_sha256"],
            seed=int(row["seed"]),
            status=row["status"],
            exit_code=row["exit_code"],
            output_dir=row["output_dir"],
            wall_time_s=row["wall_time_s"],
        )
        for row in rows
    ]


def print_runs(database_path: Path = DATABASE_PATH, limit: int | None = None) -> None:
    runs = list_runs(database_path, limit)

    if not runs:
        print("No runs recorded.")
        return

    for run in runs:
        print(f"[{run.run_id}] {run.created_at}  {run.mode}  {run.status} (exit {run.exit_code})")
        print(f"  config: {run.config_path or '(inline)'}")
        print(f"  sha256: {run.config_sha256}")
        print(f"  seed:   {run.seed}")

        if run.output_dir:
            print(f"  output: {run.output_dir}")

        if run.wall_time_s is not None:
            print(f"  time:   {run.wall_time_s:.2f}s")

        print()

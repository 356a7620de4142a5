from __future__ import annotations


def pytest_configure(config) -> None:
    config.addinivalue_line(
        "markers",
        "bench: acceptance-scale checks (long runs, large ensembles); deselect with -m 'not bench'",
    )

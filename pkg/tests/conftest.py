import json
from pathlib import Path

import pytest

from seqmolgen import ingest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def qm9():
    return ingest.QM9


@pytest.fixture(scope="session")
def zinc():
    return ingest.ZINC


@pytest.fixture(scope="session")
def surrogate():
    """The 6000-molecule QM9-like corpus (explicit hydrogens)."""
    res = ingest.read_smiles_file(DATA / "qm9_surrogate.smi", ingest.QM9)
    return res.graphs


@pytest.fixture(scope="session")
def golden():
    return json.loads((DATA / "golden.json").read_text())



ACCEPTANCE: list[str] = []  # one line per criterion, filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

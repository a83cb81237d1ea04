from pathlib import Path

import pytest

from ipwmeta import load_dataset

DATA_DIR = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture(scope="session")
def clopidogrel_path():
    return DATA_DIR / "clopidogrel.csv"


@pytest.fixture(scope="session")
def clopidogrel_counts_path():
    return DATA_DIR / "clopidogrel_counts.csv"


@pytest.fixture(scope="session")
def clopidogrel(clopidogrel_counts_path):
    return load_dataset(clopidogrel_counts_path)

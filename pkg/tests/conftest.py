import os

import pytest

from hfvoice import cli
from hfvoice.audio import load_cohort
from hfvoice.features import build_matrix, matrix_to_csv
from hfvoice.synth import synth_cohort

from helpers import SEPARABLE


@pytest.fixture(scope="session")
def cohort29_dir(tmp_path_factory):
    """Default 29-patient synthetic cohort written through the CLI."""
    d = tmp_path_factory.mktemp("cohort29")
    assert cli.main(["synth", "--out", str(d), "--seed", "7"]) == 0
    return d


@pytest.fixture(scope="session")
def cohort29(cohort29_dir):
    return load_cohort(os.path.join(cohort29_dir, "manifest.jsonl"))


@pytest.fixture(scope="session")
def matrix29(cohort29):
    return build_matrix(cohort29)


@pytest.fixture(scope="session")
def matrix29_csv(matrix29, tmp_path_factory):
    p = tmp_path_factory.mktemp("m29") / "matrix.csv"
    matrix_to_csv(matrix29, p)
    return p


@pytest.fixture(scope="session")
def separable_matrix():
    return build_matrix(synth_cohort(SEPARABLE))

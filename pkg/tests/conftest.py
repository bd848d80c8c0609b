import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import helpers  # noqa: E402


@pytest.fixture(scope="session")
def wordcount():
    return helpers.wordcount_dag(), helpers.wordcount_gt()


@pytest.fixture(scope="session")
def adanalytics():
    return helpers.adanalytics_dag(), helpers.adanalytics_gt()


@pytest.fixture(scope="session")
def branching():
    return helpers.branching_dag(), helpers.branching_gt()


@pytest.fixture(scope="session")
def wordcount_models(wordcount):
    dag, gt = wordcount
    return helpers.train_from_sweep(
        dag, gt, helpers.wordcount_train_config(), helpers.WORDCOUNT_SWEEP
    )


@pytest.fixture(scope="session")
def adanalytics_models(adanalytics):
    dag, gt = adanalytics
    return helpers.train_from_sweep(
        dag, gt, helpers.adanalytics_train_config(), helpers.ADANALYTICS_SWEEP
    )


@pytest.fixture(scope="session")
def branching_models(branching):
    dag, gt = branching
    return helpers.train_from_sweep(
        dag, gt, helpers.branching_train_config(), helpers.BRANCHING_SWEEP
    )

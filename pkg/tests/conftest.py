import pytest

from dialogweave.synthesis import Setting, SynthesisConfig, synthesize_corpus
from dialogweave.testing import (
    build_fixture_corpus,
    fixture_database,
    fixture_detector,
    fixture_ontology,
    fixture_search_provider,
    fixture_synthesis_backends,
)


@pytest.fixture(scope="session")
def ontology():
    return fixture_ontology()


@pytest.fixture(scope="session")
def db():
    return fixture_database()


@pytest.fixture(scope="session")
def search():
    return fixture_search_provider()


@pytest.fixture(scope="session")
def detector():
    return fixture_detector()


@pytest.fixture(scope="session")
def tod_corpus():
    return build_fixture_corpus(12, seed=3)


@pytest.fixture(scope="session")
def fused_initial(ontology, detector):
    config = SynthesisConfig(setting=Setting.INITIAL, seed=7)
    backends = fixture_synthesis_backends(goal_script="mixed")
    return synthesize_corpus(
        build_fixture_corpus(10, seed=3), config, backends, detector, ontology
    ).dialogs

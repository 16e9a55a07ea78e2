import numpy as np
import pytest

from analogylab.corpus import CorpusSpec, generate_corpus, make_splits, random_split_spec


@pytest.fixture(scope="session")
def default_corpus():
    return generate_corpus(CorpusSpec())


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(CorpusSpec(num_categories=5, num_properties=4, exemplars_per_cell=3, seed=3))


@pytest.fixture(scope="session")
def default_splits(default_corpus):
    spec = random_split_spec(default_corpus.spec, 2, 6, test_exemplars=2, seed=0)
    return make_splits(default_corpus, spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

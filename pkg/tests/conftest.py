import numpy as np
import pytest

from cartographer import gesture as G
from cartographer import layout as L
from cartographer.cli import generate_demo_corpus
from cartographer.ingest import ingest_collection

FIXTURES = __import__("pathlib").Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def warm_kernels():
    """Compile the numba kernels once so timed tests measure the algorithms."""
    rng = np.random.default_rng(0)
    X = rng.standard_normal((64, 8))
    L.build_knn(X, 4, mode="nn_descent", seed=1)
    knn = L.build_knn(X, 4)
    fuzzy = L.fuzzy_simplicial_set(knn)
    init = L.init_layout(fuzzy, L.LayoutConfig(n_neighbors=4, n_epochs=2, seed=1))
    L.optimize_layout(fuzzy, init, L.LayoutConfig(n_neighbors=4, n_epochs=2, seed=1))
    return True


@pytest.fixture(scope="session")
def demo_corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    generate_demo_corpus(seed=7, n=40, out=out)
    return out


@pytest.fixture(scope="session")
def demo_dataset(tmp_path_factory, demo_corpus_dir):
    dest = tmp_path_factory.mktemp("dataset")
    ingest_collection(str(demo_corpus_dir), dest, workers=1)
    return dest


@pytest.fixture(scope="session")
def gesture_model():
    return G.load_model(FIXTURES / "gesture_model.glm")

import pytest

from metaretrain.synthdigits import ensure_dataset, make_digits


@pytest.fixture(scope="session")
def digits60k():
    """Full-size synthetic digit corpus (same scale as the MNIST train set)."""
    return make_digits(60000, seed=1234)


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    """IDX-format dataset directory shared across CLI/acceptance tests."""
    root = tmp_path_factory.mktemp("dataset")
    ensure_dataset(root, n_train=60000, n_test=2000, seed=1234)
    return root

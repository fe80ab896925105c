import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import corpusgen  # noqa: E402


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory):
    """Corpus + removal lists with the documented duplicate structure."""
    root = tmp_path_factory.mktemp("corpus")
    return corpusgen.build(root)


@pytest.fixture(scope="session")
def demo_dir():
    return Path(__file__).parent.parent / "demo"

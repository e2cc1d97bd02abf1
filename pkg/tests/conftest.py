import json
import os

import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def goldens():
    """Frozen reference values; regenerate with scripts/make_goldens.py."""
    with open(os.path.join(FIXTURES, "goldens.json"), encoding="utf-8") as fh:
        return json.load(fh)

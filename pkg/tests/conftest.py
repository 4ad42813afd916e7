import json

import pytest

from laneforge.fixtures import generate_fixture_city


@pytest.fixture(scope="session")
def fixture_city(tmp_path_factory):
    """Synthetic grid town generated once per test session."""
    root = tmp_path_factory.mktemp("city")
    truth = generate_fixture_city(root)
    return root, truth


@pytest.fixture(scope="session")
def fixture_city_run(fixture_city):
    """A completed `all` pipeline run over the fixture city."""
    from laneforge.cli import main

    root, truth = fixture_city
    rc = main(["all", "--config", str(root / "config.json")])
    assert rc == 0
    return root, truth, root / "out"


def load_truth(root):
    return json.loads((root / "truth.json").read_text())

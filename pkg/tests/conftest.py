import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def desknet7():
    from leam.desknet import build_desknet

    return build_desknet(7, name="desknet7")


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Four procedural identities with two 64x64 images each and two models."""
    from leam.synth import write_dataset

    root = tmp_path_factory.mktemp("dataset")
    return write_dataset(root, identities=4, images_per_identity=2, size=64, seed=3, model_seeds=(7, 8))


@pytest.fixture(scope="session")
def small_archive(small_dataset, tmp_path_factory):
    from leam.cli import main

    out = tmp_path_factory.mktemp("archive")
    assert main(["map", str(small_dataset), "--out", str(out), "--model", "desknet7"]) == 0
    return out


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])

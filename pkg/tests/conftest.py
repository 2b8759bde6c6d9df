import json
import stat
import sys
import textwrap

import numpy as np
import pytest

from quadleaf import LimitMap, PipelineConfig, train_baseline
from quadleaf.synthetic import make_suite, training_patches

CLASSES = ("late_blight", "early_blight", "healthy")


@pytest.fixture(scope="session")
def b2_config():
    return PipelineConfig(depth_limit=7, limit_map=LimitMap(2, {"late_blight": 1, "early_blight": 3}))


@pytest.fixture(scope="session")
def trained_model():
    # smaller lesions than the test suites, so partially covered cells still
    # land on the disease side of the centroid boundary
    leaves = make_suite(60, seed=99, labels=CLASSES, lesion_radius=(6, 10))
    return train_baseline(training_patches(leaves, 2))


@pytest.fixture(scope="session")
def model_file(tmp_path_factory, trained_model):
    path = tmp_path_factory.mktemp("model") / "model.json"
    trained_model.save(path)
    return path


@pytest.fixture(scope="session")
def config_file(tmp_path_factory, b2_config):
    path = tmp_path_factory.mktemp("cfg") / "cfg.json"
    path.write_text(json.dumps(b2_config.to_dict()))
    return path


MOCK_CLASSIFIER = """\
import json, os, sys
mode = os.environ.get("MOCK_MODE", "fixed")
with open(sys.argv[1]) as fh:
    manifest = json.load(fh)
ids = [p["id"] for p in manifest["patches"]]
for p in manifest["patches"]:
    assert os.path.isfile(p["png_path"]), p["png_path"]
if mode == "fail":
    sys.stderr.write("boom\\n")
    sys.exit(1)
if mode == "garbage":
    print("not json")
    sys.exit(0)
if mode == "omit":
    ids = ids[1:]
if mode == "dup":
    ids = ids + ids[:1]
if mode == "unknown":
    ids = ids + ["zzz"]
label = os.environ.get("MOCK_LABEL", "late_blight")
print(json.dumps([{"id": i, "label": label, "confidence": 0.9} for i in ids]))
"""


@pytest.fixture
def mock_classifier(tmp_path):
    """Path-free command string for a scripted external classifier."""
    script = tmp_path / "mock_classifier.py"
    script.write_text(textwrap.dedent(MOCK_CLASSIFIER))
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    return f"{sys.executable} {script}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

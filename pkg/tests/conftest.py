import os

import pytest

from layerscope import synthetic
from layerscope.imagebuilder import write_oci_layout

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def layouts(tmp_path_factory):
    """OCI layouts for the baseline and every tactic fixture, keyed by tactic (None for baseline)."""
    root = tmp_path_factory.mktemp("layouts")
    out = {}
    for tactic in (None,) + synthetic.TACTICS:
        out[tactic] = write_oci_layout(synthetic.tactic_image(tactic), str(root / (tactic or "baseline")))
    return out


@pytest.fixture(scope="session")
def app_layouts(tmp_path_factory):
    root = tmp_path_factory.mktemp("apps")
    return {
        "python": write_oci_layout(synthetic.python_app_image(), str(root / "python")),
        "node": write_oci_layout(synthetic.node_app_image(), str(root / "node")),
    }


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])

"""End-to-end: the primary toolkit consumes this bridge over TCP.

Exercises the full experiment loop (handshake, train, score) through
the wire protocol only; the stub backend stands in for a model, so the
assertion is about completion and report shape, not quality.
"""

import json
import subprocess
import sys

import pytest

from cloze_bridge.server import TcpServer
from cloze_bridge.stub import StubBackend

CONLL = """basal B
carcinoma I
was O
excised O
. O

the O
patient O
rested O
. O

melanoma B
recurred O
in O
march O
. O

scans O
showed O
nothing O
. O

chronic B
nephritis I
persisted O
. O

the O
ward O
was O
quiet O
. O
"""


@pytest.fixture
def data_dir(tmp_path):
    for name in ("train", "test"):
        (tmp_path / f"{name}.conll").write_text(CONLL, encoding="utf-8")
    return tmp_path


def test_run_experiment_over_bridge(data_dir, tmp_path):
    server = TcpServer(StubBackend(), port=0)
    server.start_background()
    try:
        out_dir = tmp_path / "run"
        result = subprocess.run(
            [
                sys.executable, "-m", "clozetag.cli",
                "run-experiment",
                "--train", str(data_dir / "train.conll"),
                "--test", str(data_dir / "test.conll"),
                "--entity-type", "disease",
                "--k", "3",
                "--seeds", "1,2",
                "--epochs", "2",
                "--distill-epochs", "2",
                "--scorer", f"bridge:{server.host}:{server.port}",
                "--out", str(out_dir),
            ],
            capture_output=True,
            text=True,
            timeout=300,
        )
        assert result.returncode == 0, result.stderr
        report = json.loads((out_dir / "report.json").read_text())
        done = [c for c in report["cells"] if c["error"] is None]
        assert len(done) == 2
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["config"]["scorer"].startswith("bridge:")
    finally:
        server.close()

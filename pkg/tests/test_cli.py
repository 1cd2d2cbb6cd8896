import json
import xml.etree.ElementTree as ET

import pytest

from cis_kit.cli import main
from cis_kit.models import example1_model, save_model


@pytest.fixture(scope="module")
def feas_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("feas")
    assert main(["feas", "--model", "example1", "--horizon", "7", "--out", str(out)]) == 0
    return out


def test_feas_writes_artifacts(feas_dir):
    cert = json.loads((feas_dir / "certificate.json").read_text())
    assert cert["N"] == 7 and cert["d"] >= 1e-7
    assert json.loads((feas_dir / "verification.json").read_text())["passed"]
    manifest = json.loads((feas_dir / "manifest-feas.json").read_text())
    assert manifest["seed"] == 0 and manifest["command"] == "feas"
    assert str(feas_dir / "certificate.json") in manifest["outputs"]


def test_feas_is_reproducible(feas_dir, tmp_path):
    assert main(["feas", "--model", "example1", "--horizon", "7", "--out", str(tmp_path)]) == 0
    for name in ("certificate.json", "verification.json"):
        assert (tmp_path / name).read_bytes() == (feas_dir / name).read_bytes()


def test_feas_model_file_and_range(tmp_path):
    save_model(example1_model(), tmp_path / "example1.json")
    code = main(["feas", "--model", str(tmp_path / "example1.json"), "--horizon", "4:6",
                 "--out", str(tmp_path)])
    assert code == 0
    assert json.loads((tmp_path / "certificate.json").read_text())["N"] == 4


def test_feas_error_codes(tmp_path):
    assert main(["feas", "--model", "example1", "--horizon", "3", "--out", str(tmp_path)]) == 1
    assert main(["feas", "--model", str(tmp_path / "missing.json"), "--horizon", "7",
                 "--out", str(tmp_path)]) == 1


def test_feas_not_found(tmp_path):
    # the only invariant set of x+ = 2x with a pinned input is the origin
    model = {"name": "pinned", "A": [[2.0]], "B": [[1.0]],
             "X": {"box": {"lb": [-1], "ub": [1]}}, "U": {"box": {"lb": [0], "ub": [0]}}}
    (tmp_path / "m.json").write_text(json.dumps(model))
    code = main(["feas", "--model", str(tmp_path / "m.json"), "--horizon", "3",
                 "--restarts", "1", "--max-rounds", "5", "--out", str(tmp_path)])
    assert code == 2


def test_invariant_codes(feas_dir, tmp_path):
    cert = feas_dir / "certificate.json"
    assert main(["invariant", "--model", "example1", "--cert", str(cert),
                 "--out", str(tmp_path)]) == 0
    assert "V" in json.loads((tmp_path / "invariant.json").read_text())
    data = json.loads(cert.read_text())
    data["states"][3][0] += 0.5
    (tmp_path / "bad.json").write_text(json.dumps(data))
    assert main(["invariant", "--model", "example1", "--cert", str(tmp_path / "bad.json"),
                 "--out", str(tmp_path)]) == 2
    (tmp_path / "junk.json").write_text("{not json")
    assert main(["invariant", "--model", "example1", "--cert", str(tmp_path / "junk.json"),
                 "--out", str(tmp_path)]) == 1


def test_backward_codes(feas_dir, tmp_path):
    assert main(["backward", "--model", "example1", "--seed-set", "X",
                 "--out", str(tmp_path)]) == 0
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert trace["converged"]
    assert main(["backward", "--model", "example1", "--seed-set",
                 str(feas_dir / "certificate.json"), "--mode", "inside-out",
                 "--out", str(tmp_path / "io")]) == 0
    assert main(["backward", "--model", "example1", "--seed-set", "X", "--mode", "inside-out",
                 "--out", str(tmp_path)]) == 1
    assert main(["backward", "--model", "example1", "--seed-set", "X", "--tol", "0",
                 "--max-iter", "3", "--out", str(tmp_path)]) == 3


def test_mpc_codes(tmp_path):
    assert main(["mpc", "--model", "scalar", "--steps", "10", "--out", str(tmp_path)]) == 0
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == "step,x0,u0,stage_cost,feasible"
    assert json.loads((tmp_path / "log.json").read_text())["all_feasible"]
    # equilibrium start gives a flat log
    assert main(["mpc", "--model", "scalar", "--steps", "5", "--x0", "0",
                 "--out", str(tmp_path / "eq")]) == 0
    rows = (tmp_path / "eq" / "log.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[1]) == 0.0 for r in rows)
    # outside X
    assert main(["mpc", "--model", "scalar", "--steps", "5", "--x0", "3",
                 "--out", str(tmp_path / "bad")]) == 2


def test_mpc_with_terminal_set(tmp_path):
    (tmp_path / "xf.json").write_text(json.dumps({"box": {"lb": [-0.5], "ub": [0.5]}}))
    assert main(["mpc", "--model", "scalar", "--steps", "10", "--terminal",
                 f"set:{tmp_path / 'xf.json'}", "--out", str(tmp_path)]) == 0
    assert main(["mpc", "--model", "scalar", "--terminal", "bogus", "--out", str(tmp_path)]) == 1


def test_plot_artifacts(feas_dir, tmp_path):
    assert main(["backward", "--model", "example1", "--seed-set", "X",
                 "--out", str(tmp_path)]) == 0
    assert main(["mpc", "--model", "scalar", "--steps", "5", "--out", str(tmp_path)]) == 0
    for src in (tmp_path / "trace.json", tmp_path / "log.csv", feas_dir / "certificate.json"):
        svg = tmp_path / (src.stem + ".svg")
        assert main(["plot", str(src), "--out", str(svg)]) == 0
        ET.fromstring(svg.read_bytes())
        first = svg.read_bytes()
        assert main(["plot", str(src), "--out", str(svg)]) == 0
        assert svg.read_bytes() == first
    assert main(["plot", str(feas_dir / "certificate.json"), "--out", str(tmp_path / "x.svg"),
                 "--dims", "0,5"]) == 1


def test_bench_unknown_suite(tmp_path):
    assert main(["bench", "nope", "--out", str(tmp_path)]) == 1


def test_bench_single_trailer(tmp_path):
    assert main(["bench", "truck", "--max-m", "1", "--out", str(tmp_path)]) == 0
    table = (tmp_path / "bench.md").read_text()
    assert "| M=1 |" in table and "substitutes" in table
    rows = (tmp_path / "bench.csv").read_text().splitlines()
    assert rows[0] == "row,M=1"
    volume = float(rows[3].split(",")[1])
    assert volume > 0

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from sinhpoisson.cli import main

from oracles import BESSEL_ROBIN

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASE = """\
eps = {eps}
resolution = [32, 64]
grading = 3.0

[domain]
kind = "disk"
params = [5.0]

[anisotropy]
kind = "gaussian"
amplitude = 1.0
width = 1.0

[spikes]
alpha = {alpha}
m = 1
signs = {signs}
d = {d}
"""


def write_cfg(tmp_path, name="c.toml", eps="[1e-2, 3.1622776601683795e-3, 1e-3]", alpha=0.5, d=1.5, extra="", signs="[1, -1]"):
    p = tmp_path / name
    p.write_text(BASE.format(eps=eps, alpha=alpha, d=d, signs=signs) + extra)
    return p


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def test_integer_alpha_exit_2(tmp_path):
    r = run("mu", "--config", write_cfg(tmp_path, alpha=1.0), "--out", tmp_path / "o")
    assert r.exit_code == 2
    assert "line 15" in r.output and "non-integer" in r.output


def test_unknown_field_exit_2(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("colour = 3\n" + write_cfg(tmp_path).read_text())
    r = run("mu", "--config", p, "--out", tmp_path / "o")
    assert r.exit_code == 2 and "colour" in r.output


def test_missing_config_exit_2(tmp_path):
    assert run("mu", "--config", tmp_path / "nope.toml").exit_code == 2


def test_sweep_needs_three_eps(tmp_path):
    r = run("residual-sweep", "--config", write_cfg(tmp_path, eps="[1e-2, 1e-3]"), "--out", tmp_path / "o")
    assert r.exit_code == 2 and "need ≥3 epsilons" in r.output


def test_bad_resolution_flag(tmp_path):
    r = run("mu", "--config", write_cfg(tmp_path), "--resolution", "64by128")
    assert r.exit_code == 2


def test_mu_reruns_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    outs = []
    for k, threads in enumerate((1, 1, 2)):
        out = tmp_path / f"o{k}"
        assert run("mu", "--config", cfg, "--out", out, "--threads", threads).exit_code == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1] == outs[2]
    text = outs[0]["mu.csv"].decode()
    assert text.startswith("# config ")


def test_green_unit_disk_matches_bessel(tmp_path):
    out = tmp_path / "g"
    r = run("green", "--config", CONFIGS / "green_unit_disk.toml", "--out", out)
    assert r.exit_code == 0, r.output
    data = json.loads((out / "green.json").read_text())
    assert abs(data["robin"]["q"] - BESSEL_ROBIN) < 1e-3
    assert (out / "robin.csv").exists() and (out / "convergence.csv").exists()


@pytest.mark.parametrize("signs, binding", [("[1, 1]", "ball[1]"), ("[1, -1]", "q_dist[1]")])
def test_hit_constraint_exit_3_names_margin(tmp_path, signs, binding):
    # like signs repel the spike into the small ball; opposite signs pull it onto q
    cfg = write_cfg(tmp_path, eps="[1e-3]", d=0.2, signs=signs)
    r = run("optimize", "--config", cfg, "--out", tmp_path / "o")
    assert r.exit_code == 3
    assert binding in r.stderr
    data = json.loads((tmp_path / "o" / "optimize.json").read_text())
    assert data["runs"][0]["status"] == "hit-constraint"


def test_report_collects_matching_parts(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "o"
    assert run("mu", "--config", cfg, "--out", out).exit_code == 0
    (out / "stray.json").write_text(json.dumps({"config_fingerprint": "other"}))
    assert run("report", "--config", cfg, "--out", out).exit_code == 0
    rep = json.loads((out / "report.json").read_text())
    assert set(rep["parts"]) == {"mu"}


def test_solve_reports_every_eps(tmp_path):
    extra = '\n[newton]\nmax_iter = 2\n'
    cfg = write_cfg(tmp_path, eps="[1e-2, 1e-3]", extra=extra)
    r = run("solve", "--config", cfg, "--out", tmp_path / "o")
    data = json.loads((tmp_path / "o" / "solve.json").read_text())
    assert len(data["runs"]) == 2
    assert r.exit_code == (0 if any(x["converged"] for x in data["runs"]) else 3)

import json

import numpy as np
import pytest

from dualmaxwell import cli
from dualmaxwell.config import ConfigError, RunConfig, load_config
from dualmaxwell.fields import GridSpec, VectorField, save_field
from dualmaxwell.nonlin import Nonlinearity
from dualmaxwell.verify import div_curl_audit, lap_order, primal_residual_fullspace, run_suite
from dualmaxwell import spectral as spc

SMALL = """
[grid]
n = 4

[verify]
samples = 3
"""

FULLSPACE = """
[grid]
n = 8
cell_length = 6.283185307179586
mode = "periodic"

[nonlinearity]
p = 4.5

[solver]
mode = "fullspace"
lam = {lam}
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[solver]\ngrad_toll = 1e-6\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_json_equivalent_to_toml(tmp_path, small_cfg):
    cfg = load_config(small_cfg)
    j = tmp_path / "small.json"
    j.write_text(json.dumps(cfg.model_dump()))
    assert load_config(j).digest() == cfg.digest()


def test_report_deterministic(small_cfg):
    cfg = load_config(small_cfg)
    a, b = run_suite(cfg), run_suite(cfg)
    assert a.passed, [c for c in a.checks if not c.passed]
    assert a.to_json(with_timestamps=False) == b.to_json(with_timestamps=False)
    assert json.loads(a.to_json())["provenance"]["config_sha256"] == cfg.digest()


def test_fullspace_bound_config_runs_whole_battery():
    cfg = RunConfig.model_validate({
        "grid": {"n": 8, "cell_length": 6.283185307179586, "mode": "periodic"},
        "nonlinearity": {"p": 4.5},
        "solver": {"mode": "fullspace", "search": "bound", "lam": 2.5},
        "verify": {"samples": 2}})
    rep = run_suite(cfg)
    assert rep.passed, [(c.name, c.detail) for c in rep.checks if not c.passed]
    assert any(c.name == "fredholm_case_I" for c in rep.checks)


def test_failing_check_is_recorded():
    cfg = RunConfig.model_validate({"grid": {"n": 4}, "verify": {"samples": 2, "rel_grad": 1e-30}})
    rep = run_suite(cfg)
    bad = [c.name for c in rep.checks if not c.passed]
    assert bad == ["ground_state_rel_grad"]
    assert not rep.totals["all_pass"]


def test_zero_field_residual_is_zero():
    g = GridSpec(8)
    assert primal_residual_fullspace(VectorField.zeros(g), 2.5, Nonlinearity(p=4.5)) == 0


def test_divcurl_audit(rng):
    g = GridSpec(8)
    X, Y = spc.split_real(rng.standard_normal(g.shape + (3,)), g)
    rep = div_curl_audit(X, Y, g)
    assert abs(rep.whole_cell_relative) < 1e-12
    assert len(rep.subboxes) == 8 and all(np.isfinite(rep.subboxes))
    rep0 = div_curl_audit(X, np.zeros_like(Y), g)
    assert all(v == 0 for v in rep0.subboxes)


def test_lap_order(rng):
    g = GridSpec(8)
    f = spc.project_divfree(rng.standard_normal(g.shape + (3,)), g)
    errs, orders = lap_order(g, 2.5, f)
    assert errs[0] > errs[1] > errs[2]
    assert min(orders) > 1.9


def test_cli_verify_exit_codes(tmp_path, small_cfg, capsys):
    assert cli.main(["verify", "--config", str(small_cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "verification.json").exists()
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid]\nn = 6\n")
    assert cli.main(["verify", "--config", str(bad)]) == 2
    assert cli.main(["info", "--config", str(tmp_path / "missing.toml")]) == 2


def test_cli_solve_and_resonance(tmp_path):
    good = tmp_path / "fs.toml"
    good.write_text(FULLSPACE.format(lam=2.5))
    out = tmp_path / "o"
    assert cli.main(["solve", "--config", str(good), "--out", str(out)]) == 0
    res = json.loads((out / "solve.json").read_text())
    assert res["results"][0]["converged"]
    on = tmp_path / "on.toml"
    on.write_text(FULLSPACE.format(lam=3.0))
    assert cli.main(["solve", "--config", str(on)]) == 1


def test_cli_decompose_and_corrupt_field(tmp_path, rng):
    g = GridSpec(8)
    p = save_field(tmp_path / "f", VectorField(g, rng.standard_normal(g.shape + (3,))))
    out = tmp_path / "o"
    assert cli.main(["decompose", str(p), "--out", str(out)]) == 0
    assert (out / "X_part.bin").exists()
    p.write_bytes(b"broken")
    assert cli.main(["decompose", str(p), "--out", str(out)]) == 2

import csv
import io
import json
import math
from pathlib import Path

import numpy as np
import pytest

from meanfield_lab import bounds as B
from meanfield_lab import experiments as ex
from meanfield_lab.cli import EXIT_OK, EXIT_RESOURCE, EXIT_VALIDATION, EXIT_VIOLATION, main
from meanfield_lab.errors import BoundViolation, FreeTheory, NotSwapSymmetric, ValidationError
from meanfield_lab.experiments import ModelConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def small_config(**over):
    raw = dict(d=2, seed=7, N=[4, 8, 16], t_over_tau=[0.5, 2.0], output={"timing": False})
    raw.update(over)
    return ModelConfig.from_dict(raw)


def write_toml(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# --- configuration ---------------------------------------------------------

def test_load_shipped_configs():
    cfg = ModelConfig.load(CONFIGS / "default.toml")
    assert cfg.d == 2 and cfg.N == (4, 8, 16, 32, 64) and cfg.t_over_tau == (0.5, 2.0)
    model = cfg.build_model()
    assert math.isclose(model.v_inf, 1.0) and math.isclose(model.tau, 0.125)
    free = ModelConfig.load(CONFIGS / "free.toml")
    assert free.build_model().v_inf == 0


def test_config_errors(tmp_path):
    with pytest.raises(ValidationError):
        ModelConfig.from_dict(dict(d=2, N=[4], t=[0.1], colour="red"))
    with pytest.raises(ValidationError):
        ModelConfig.from_dict(dict(N=[4], t=[0.1]))
    with pytest.raises(ValidationError):
        ModelConfig.from_dict(dict(d=2, N=[0], t=[0.1]))
    with pytest.raises(ValidationError):
        ModelConfig.from_dict(dict(d=2, N=[4], t=[-1.0]))
    with pytest.raises(ValidationError):
        ModelConfig.from_dict(dict(d=2, N=[4], t=[0.1], seed=-1))
    with pytest.raises(ValidationError):
        ModelConfig.load(write_toml(tmp_path, "d = [unclosed"))
    with pytest.raises(ValidationError):
        ModelConfig.from_dict(dict(d=2, N=[4])).times(small_config().build_model())


def test_t_over_tau_needs_interaction():
    cfg = ModelConfig.from_dict(dict(d=2, N=[4], t_over_tau=[0.5], V={"kind": "zero"}))
    with pytest.raises(FreeTheory):
        cfg.times(cfg.build_model())


def test_seed_determines_instance():
    a, b = small_config(), small_config()
    assert np.array_equal(a.build_model().V, b.build_model().V)
    assert np.array_equal(a.build_rho0().matrix, b.build_rho0().matrix)
    c = a.with_seed(8)
    assert not np.array_equal(a.build_model().h, c.build_model().h)


def test_corrupted_V_rejected():
    V = np.zeros((4, 4))
    V[0, 1] = V[1, 0] = 1.0
    cfg = small_config(V={"kind": "matrix", "re": V.tolist()})
    with pytest.raises(NotSwapSymmetric):
        cfg.build_model()
    report = ex.run_verify_identities(cfg)
    ex.validate_report(report)
    assert report["passed"] is False
    assert report["identities"][0]["name"] == "config_validation"
    assert "NotSwapSymmetric" in report["error"]


def test_explicit_inputs():
    cfg = small_config(h={"kind": "diagonal", "values": [0.0, 1.0]},
                       V={"kind": "diagonal", "w": [[1.0, 0.5], [0.5, -1.0]]},
                       rho0={"kind": "pure", "re": [1.0, 1.0]},
                       observable={"p": 1, "kind": "matrix", "re": [[0.0, 1.0], [1.0, 0.0]]})
    model = cfg.build_model()
    assert np.allclose(model.h, np.diag([0.0, 1.0]))
    assert np.allclose(cfg.build_rho0().matrix, 0.5 * np.ones((2, 2)))
    assert cfg.build_observable().p == 1


# --- sweeps ----------------------------------------------------------------

def test_sweep_deterministic_bytes():
    cfg = small_config()
    a = ex.to_csv(ex.run_converge_sweep(cfg), ex.SWEEP_COLUMNS)
    b = ex.to_csv(ex.run_converge_sweep(cfg), ex.SWEEP_COLUMNS)
    c = ex.to_csv(ex.run_converge_sweep(cfg, workers=3), ex.SWEEP_COLUMNS)
    assert a == b == c
    assert ex.to_json(ex.run_converge_sweep(cfg)) == ex.to_json(ex.run_converge_sweep(cfg))


def test_sweep_records():
    cfg = small_config()
    records = ex.run_converge_sweep(cfg)
    tau = cfg.build_model().tau
    assert [(r.t, r.N) for r in records] == sorted((t, N) for t in (0.5 * tau, 2 * tau) for N in (4, 8, 16))
    for r in records:
        assert r.abs_error == abs(r.qm - r.hartree)
        assert r.abs_error <= r.bound_coarse
        assert (r.bound_small_time is None) == (r.t > tau)
    rows = list(csv.reader(io.StringIO(ex.to_csv(records, ex.SWEEP_COLUMNS))))
    assert tuple(rows[0]) == ex.SWEEP_COLUMNS and len(rows) == 7


def test_free_sweep_coincides():
    for r in ex.run_converge_sweep(ModelConfig.load(CONFIGS / "free.toml")):
        assert r.abs_error <= 1e-10


def test_bound_violation_dump(monkeypatch):
    monkeypatch.setattr(ex, "record_bounds", lambda *a: (1e-30, 1e-30, None))
    with pytest.raises(BoundViolation) as info:
        ex.run_converge_sweep(small_config(N=[4]))
    assert info.value.record.N == 4
    inst = info.value.instance
    assert set(inst) == {"config", "h", "V", "rho0", "observable"}
    json.dumps(inst)


def test_slope_and_monotone_helpers():
    Ns = [4, 8, 16, 32]
    assert math.isclose(ex.convergence_slope(Ns, [1 / n for n in Ns]), -1.0)
    assert ex.monotone_with_slack([4, 3, 2, 1])
    assert ex.monotone_with_slack([4, 3, 3.2, 1])
    assert not ex.monotone_with_slack([4, 3, 3.5, 1])
    assert not ex.monotone_with_slack([4, 4.1, 3, 3.1])


def test_bound_table_rows():
    cfg = small_config(N=[16], t=[0.0], t_over_tau=[])
    (row,) = ex.run_bound_table(cfg)
    P = B.BoundParams(1.0, 1.0, 1, 16, 0.0)
    assert row["coarse"] == B.theorem_bound(P, 1.0, "coarse")
    assert math.isclose(row["fine"], 2.0498, abs_tol=5e-4)
    assert row["small_time"] == 0.0


def test_free_theory_bounds_use_zero_ratio():
    model = ModelConfig.load(CONFIGS / "free.toml").build_model()
    coarse, fine, small = ex.record_bounds(model, 1, 16, 5.0, 1.0)
    assert coarse == B.theorem_bound(B.BoundParams(1.0, 1.0, 1, 16, 0.0), 1.0)
    assert small == 0.0


def test_simulate_diagnostics():
    rows = ex.simulate(small_config())
    assert rows[0]["t"] == 0.0 and len(rows) == 3
    for r in rows:
        assert abs(r["trace"] - 1) < 1e-10
        assert abs(r["energy"] - rows[0]["energy"]) < 1e-8
        assert abs(r["purity"] - 1) < 1e-8
        assert r["hermiticity_defect"] < 1e-12


# --- identity report -------------------------------------------------------

def test_quick_report_passes_and_validates():
    report = ex.run_verify_identities(small_config(), quick=True)
    ex.validate_report(report)
    failed = [r for r in report["identities"] if not r["passed"]]
    assert report["passed"], failed
    back = json.loads(ex.to_json(report))
    ex.validate_report(back)
    assert back == json.loads(json.dumps(report))


def test_report_schema_rejects_garbage():
    import jsonschema

    with pytest.raises(jsonschema.ValidationError):
        ex.validate_report({"seed": 1, "passed": True})
    with pytest.raises(jsonschema.ValidationError):
        ex.validate_report({"seed": 1, "passed": True, "identities": [{"name": "x"}]})


def test_identity_line():
    r = ex.IdentityResult("demo", True, 1e-12, 1e-10)
    assert r.line().startswith("PASS demo")
    assert ex.IdentityResult("demo", False, 1.0, 1e-10).line().startswith("FAIL")


# --- command line ----------------------------------------------------------

SMALL_TOML = """
seed = 3
d = 2
N = [4, 8]
t_over_tau = [0.5]
[output]
timing = false
"""


def test_cli_bound_table_and_sweep(tmp_path, capsys):
    cfg = write_toml(tmp_path, SMALL_TOML)
    out = tmp_path / "out"
    assert main(["bound-table", cfg, "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "bounds.csv")))
    assert len(rows) == 2 and tuple(rows[0]) == B.BOUND_COLUMNS
    assert main(["converge-sweep", cfg, "--out", str(out), "--workers", "2"]) == EXIT_OK
    first = (out / "sweep.csv").read_bytes()
    assert main(["converge-sweep", cfg, "--out", str(out)]) == EXIT_OK
    assert (out / "sweep.csv").read_bytes() == first
    assert main(["converge-sweep", cfg, "--format", "json"]) == EXIT_OK
    assert len(json.loads(capsys.readouterr().out)) == 2
    assert main(["simulate", cfg, "--out", str(out)]) == EXIT_OK
    assert (out / "simulate.csv").exists()


def test_cli_seed_override(tmp_path, capsys):
    cfg = write_toml(tmp_path, SMALL_TOML)
    main(["converge-sweep", cfg])
    a = capsys.readouterr().out
    main(["converge-sweep", cfg, "--seed", "4"])
    b = capsys.readouterr().out
    main(["converge-sweep", cfg, "--seed", "3"])
    assert capsys.readouterr().out == a != b


def test_cli_validation_exit(tmp_path):
    assert main(["bound-table", str(tmp_path / "missing.toml")]) == EXIT_VALIDATION
    assert main(["bound-table", write_toml(tmp_path, "d = 2\nN = [4]\nbogus = 1\n")]) == EXIT_VALIDATION
    assert main(["bound-table", write_toml(tmp_path, SMALL_TOML), "--workers", "0"]) == EXIT_VALIDATION
    bad = SMALL_TOML + '[V]\nkind = "matrix"\nre = [[0,1,0,0],[1,0,0,0],[0,0,0,0],[0,0,0,0]]\n'
    out = tmp_path / "out"
    assert main(["verify-identities", write_toml(tmp_path, bad, "bad.toml"), "--out", str(out)]) == EXIT_VALIDATION
    report = json.loads((out / "identities.json").read_text())
    assert report["identities"][0]["name"] == "config_validation"


def test_cli_violation_exit(tmp_path, monkeypatch):
    monkeypatch.setattr(ex, "record_bounds", lambda *a: (1e-30, 1e-30, None))
    out = tmp_path / "out"
    assert main(["converge-sweep", write_toml(tmp_path, SMALL_TOML), "--out", str(out)]) == EXIT_VIOLATION
    dump = json.loads((out / "bound_violation.json").read_text())
    assert {"error", "record", "instance"} <= set(dump)


def test_cli_resource_exit(tmp_path):
    text = SMALL_TOML.replace("d = 2", "d = 3").replace("N = [4, 8]", "N = [5000]")
    assert main(["converge-sweep", write_toml(tmp_path, text)]) == EXIT_RESOURCE

import math
from pathlib import Path

import numpy as np
import pytest

from silslab.experiments import (COLUMNS, ConfigError, ExperimentConfig, derive_seed, parse_config, read_config, read_csv,
                                 run_comparison, run_experiment, run_recovery_curve, summarize, target_x,
                                 to_csv)

SMALL = """
kind = recovery
model = 3
d = 6
sigma = 2
rho = 0.2
c = 2
c = 0.5
trials = 2
method = sdp
method = exact
seed = 7
timing = false
"""


def test_parse_config_grids_and_overrides():
    cfg = parse_config(SMALL + "sdp.max_iter = 3000\n")
    assert cfg.c == [2.0, 0.5] and cfg.method == ["sdp", "exact"] and not cfg.timing
    assert cfg.solver == {"feas_tol": 1e-5, "max_iter": 3000}
    assert [cell[0] for cell in cfg.cells()] == [math.ceil(2 * 4.04 * math.log(6)),
                                                 math.ceil(0.5 * 4.04 * math.log(6))]


@pytest.mark.parametrize("text", [
    "method = svm\n", "trials = 0\n", "bogus = 1\n", "model = 4\n", "timing = maybe\n",
    "sdp.nonsense = 1\n", "seed = 1\nseed = 2\n", "d = x\n", "just a line\n", "n_rule = other\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_empty_method_list():
    with pytest.raises(ConfigError):
        ExperimentConfig(method=[])


def test_defaults_by_model():
    assert ExperimentConfig(model=2, kind="comparison").sign_mode == "ones"
    assert ExperimentConfig(model=2).params_by == "cv"
    assert ExperimentConfig(model=3).params_by == "fixed"
    assert ExperimentConfig(model=1).rule == "d_log"
    cmp2 = ExperimentConfig(model=2, kind="comparison", d=[40], sigma=[2], c=[2.0])
    assert cmp2.cells()[0][0] == 30
    cmp3 = ExperimentConfig(model=3, kind="comparison", d=[40], sigma=[2], c=[1.0])
    assert cmp3.cells()[0][0] == 15


def test_derive_seed_distinct_and_stable():
    seeds = {derive_seed(0, c, t) for c in range(5) for t in range(50)}
    assert len(seeds) == 250
    assert derive_seed(3, 1, 2) == derive_seed(3, 1, 2) != derive_seed(3, 2, 1)


def test_target_x():
    assert target_x([2, -2, 1, -1], 2).tolist() == [1, -1, 0, 0]
    assert target_x([0.1, 0, -0.5], 1).tolist() == [0, 0, -1]


@pytest.fixture(scope="module")
def small_rows():
    return run_experiment(parse_config(SMALL), workers=1)


def test_rows_and_aggregates(small_rows):
    trial_rows = [r for r in small_rows if r["trial"] not in ("mean", "min", "max")]
    assert len(trial_rows) == 2 * 2 * 2
    for r in trial_rows:
        if r["method"] == "sdp" and r["recovered_any"]:
            # verified against the exact optimum of the same trial
            ex = next(e for e in trial_rows if e["method"] == "exact" and e["c"] == r["c"]
                      and e["trial"] == r["trial"])
            assert ex["objective"] >= r["objective"] - 1e-5
    for stat, fn in (("mean", np.mean), ("min", np.min), ("max", np.max)):
        for agg in (r for r in small_rows if r["trial"] == stat):
            vals = [r["tpr"] for r in trial_rows if r["method"] == agg["method"] and r["c"] == agg["c"]]
            assert agg["tpr"] == pytest.approx(fn(vals))


def test_csv_round_trip_and_schema(small_rows):
    text = to_csv(small_rows)
    lines = text.splitlines()
    assert lines[0].startswith("#") and lines[1] == ",".join(COLUMNS)
    back = read_csv(text)
    assert len(back) == len(small_rows)
    assert summarize(back, "sdp", "tpr") == pytest.approx(
        np.mean([r["tpr"] for r in small_rows if r["method"] == "sdp" and isinstance(r["trial"], int)]))


def test_determinism_and_worker_independence(tmp_path):
    cfg = parse_config(SMALL)
    a = run_recovery_curve(cfg, out=str(tmp_path / "a.csv"), workers=1)
    b = run_recovery_curve(cfg, out=str(tmp_path / "b.csv"), workers=2)
    assert a == b == (tmp_path / "a.csv").read_text()


def test_comparison_baselines_blank_any():
    cfg = parse_config("kind = comparison\nmodel = 3\nd = 8\nsigma = 2\nrho = 0.5\nn = 12\n"
                       "trials = 2\nmethod = lasso\nmethod = dantzig\ntiming = false\n")
    rows = read_csv(run_comparison(cfg, out=""))
    for r in rows:
        assert r["recovered_any"] == "" and r["wall_ms"] == "0"
        assert r["c"] == "nan" and r["n"] == "12"


def test_failure_rows_are_nan(monkeypatch, capsys):
    import silslab.experiments as ex

    def boom(*a, **k):
        raise FloatingPointError("injected")

    monkeypatch.setattr(ex, "recover", boom)
    cfg = parse_config("model = 3\nd = 5\nsigma = 1\nrho = 0\nn = 6\ntrials = 1\nmethod = sdp\n")
    rows = run_experiment(cfg, workers=1)
    assert math.isnan(rows[0]["tpr"]) and rows[0]["recovered_any"] is None
    assert "injected" in capsys.readouterr().err


def test_sils_threads_cap(monkeypatch):
    import silslab.experiments as ex
    monkeypatch.setenv("SILS_THREADS", "1")
    assert ex._workers() == 1


CONFIG_DIR = Path(__file__).resolve().parents[1] / "scripts" / "configs"


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*/*.cfg")), ids=lambda p: f"{p.parent.name}/{p.stem}")
def test_shipped_configs_parse(path):
    cfg = read_config(path)
    assert cfg.cells()


def test_shipped_comparison_sizes():
    sizes = {p.stem: {cell[0] for cell in read_config(p).cells()}
             for p in (CONFIG_DIR / "full").glob("*comparison*.cfg")}
    assert sizes == {"model2_comparison_row1": {30}, "model2_comparison_row2": {231},
                     "model3_comparison_row1": {15}, "model3_comparison_row2": {116}}

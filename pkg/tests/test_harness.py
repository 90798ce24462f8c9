import csv
import json
import os

import numpy as np
import pytest

import bada.harness as harness
from bada.cli import main
from bada.exceptions import ConfigError, NumericalError
from bada.harness import (
    RunConfig,
    _save_checkpoint,
    build_params,
    load_checkpoint,
    load_run,
    run,
    run_bada,
    run_baseline,
    run_suite,
)
from bada.envs import make_scenario

FAST = dict(epochs=8, trajectories_per_epoch=4, change_epochs=[4], n_permutations=19)


def quiet(**kw):
    # smoothed p-values never drop below 1/20, so alpha=0.01 can never fire
    return RunConfig(**{**FAST, "smoothed_p_value": True, "alpha": 0.01, **kw})


def test_same_seed_same_reports():
    a = [r.to_dict() for r in run(RunConfig(**FAST, seed=3))]
    b = [r.to_dict() for r in run(RunConfig(**FAST, seed=3))]
    for ra, rb in zip(a, b):
        ra.pop("wall_ms"), rb.pop("wall_ms")
    assert a == b


def test_epoch_order_follows_the_algorithm():
    trace = []
    reports = run_bada(RunConfig(**{**FAST, "alpha": 0.5}), trace=trace)
    assert len(trace) == 5 * len(reports)
    for i, r in enumerate(reports):
        block = trace[5 * i:5 * i + 5]
        update = "update_adapt" if r.delta > 0 else "update_base"
        assert block == ["collect", "embed", "test", update, "save"]
    assert "update_adapt" in trace


def test_without_detection_bada_reduces_to_baseline():
    bada_reports = run(quiet(method="bada"))
    base_reports = run(quiet(method="no_adapt"))
    assert not any(r.detected for r in bada_reports)
    assert [r.objective for r in bada_reports] == [r.objective for r in base_reports]
    assert [r.mean_reward for r in bada_reports] == [r.mean_reward for r in base_reports]


def test_permutation_seed_does_not_touch_trajectories():
    a = run(quiet(permutation_seed=1))
    b = run(quiet(permutation_seed=2))
    assert [r.mean_reward for r in a] == [r.mean_reward for r in b]


def test_restart_only_diverges_after_the_change():
    a = run(RunConfig(**FAST, method="restart"))
    b = run(RunConfig(**FAST, method="no_adapt"))
    assert [r.mean_reward for r in a[:4]] == [r.mean_reward for r in b[:4]]
    assert [r.objective for r in a[4:]] != [r.objective for r in b[4:]]


def test_detected_implies_significant():
    cfg = RunConfig(**{**FAST, "alpha": 0.2})
    for r in run(cfg):
        if r.detected:
            assert r.p_value <= cfg.alpha


def test_constant_rewards_never_trigger_reward_gap():
    state_cfg = RunConfig(**{**FAST, "method": "reward_gap", "gap_long_window": 10, "gap_short_window": 2})
    from bada.detection import RewardGapDetector

    det = RewardGapDetector(2, 10, 1.0).fit()
    assert not any(det.update(None, e, rewards=[1.0] * 4) for e in range(50))
    assert run_baseline(state_cfg)


def test_baseline_wrapper_rejects_bada():
    with pytest.raises(ConfigError):
        run_baseline(RunConfig(**FAST))


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(method="magic")
    with pytest.raises(ConfigError):
        RunConfig(env="mars")
    with pytest.raises(ConfigError):
        RunConfig(change_epochs=[5, 5])
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"epochs": "ten"})


def test_sub_seeds_are_distinct_and_stable():
    cfg = RunConfig(seed=7)
    seeds = {s: cfg.sub_seed(s) for s in harness.STREAMS}
    assert len(set(seeds.values())) == len(seeds)
    assert seeds == {s: RunConfig(seed=7).sub_seed(s) for s in harness.STREAMS}


def test_outputs_written(tmp_path):
    out = str(tmp_path / "r")
    run(RunConfig(**FAST, out_dir=out, checkpoint=True))
    cfg, reports, changes = load_run(out)
    assert cfg.epochs == 8 and len(reports) == 8 and changes == [4]
    scores = json.load(open(os.path.join(out, "scores.json")))
    assert set(scores) >= {"env", "method", "seed", "detection", "rewards"}
    for line in open(os.path.join(out, "events.jsonl")):
        assert set(json.loads(line)) == {"epoch", "detector", "p_value", "statistic", "delta"}
    ckpts = sorted(os.listdir(os.path.join(out, "checkpoints")))
    assert "epoch_0007.bin" in ckpts and "epoch_0007.json" in ckpts


def test_checkpoint_round_trip(tmp_path):
    cfg = RunConfig()
    spec, _ = make_scenario(cfg.env)
    params = build_params(cfg, spec, np.random.SeedSequence(0))
    _save_checkpoint(str(tmp_path), 3, params)
    loaded = load_checkpoint(str(tmp_path / "checkpoints" / "epoch_0003"))
    for la, lb in zip(params.policy + params.value, loaded.policy + loaded.value):
        for a, b in zip(la, lb):
            assert np.array_equal(a, b)


def test_numerical_failure_flushes_partial_logs(tmp_path, monkeypatch):
    real = harness.update_step
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 4:
            raise NumericalError("boom", residual=float("inf"))
        return real(*args, **kwargs)

    monkeypatch.setattr(harness, "update_step", flaky)
    out = str(tmp_path / "r")
    with pytest.raises(NumericalError):
        run(RunConfig(**FAST, out_dir=out))
    lines = open(os.path.join(out, "epochs.jsonl")).read().splitlines()
    assert len(lines) == 3 and all(json.loads(l)["epoch"] == i for i, l in enumerate(lines))
    assert json.load(open(os.path.join(out, "failure.json")))["epoch"] == 3


def _summary(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_suite_rows_and_reproducibility(tmp_path):
    tiny = dict(FAST, epochs=5, change_epochs=[3])
    configs = [RunConfig(**tiny, seed=s, method=m) for m in ("bada", "reward_gap") for s in range(5)]
    rows, failures = run_suite(configs, str(tmp_path / "a"))
    assert len(rows) == 10 and not failures
    header = open(tmp_path / "a" / "summary.csv").readline().strip().split(",")
    assert header == ["env", "method", "seed", "f1", "precision", "recall",
                      "cumulative_reward", "recovery_mean"]
    run_suite(configs, str(tmp_path / "b"))
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    assert (tmp_path / "a" / "rewards_shift-grid.svg").read_text().startswith("<svg")


def test_empty_suite(tmp_path):
    rows, failures = run_suite([], str(tmp_path))
    assert rows == [] and failures == []
    assert _summary(tmp_path / "summary.csv") == []


def test_cli_exit_codes(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(FAST, epochs=3)))
    assert main(["run", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "r")]) == 0
    assert _summary(tmp_path / "r" / "summary.csv")[0]["seed"] == "1"
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"method": "nope"}')
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(cfg), "--method", "nope"]) == 2
    assert main(["frobnicate"]) == 2

    def explode(*a, **k):
        raise NumericalError("diverged")

    monkeypatch.setattr("bada.cli.run", explode)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1


def test_cli_suite_score_plot(tmp_path):
    suite = tmp_path / "suite"
    suite.mkdir()
    (suite / "a.json").write_text(json.dumps(dict(FAST, epochs=5, change_epochs=[3], seeds=[0, 1],
                                                  methods=["bada", "no_adapt"])))
    out = tmp_path / "out"
    assert main(["suite", "--config", str(suite), "--out", str(out)]) == 0
    assert len(_summary(out / "summary.csv")) == 4
    before = (out / "summary.csv").read_bytes()
    assert main(["score", "--out", str(out)]) == 0
    assert (out / "summary.csv").read_bytes() == before
    (out / "f1_shift-grid.svg").unlink()
    assert main(["plot", "--out", str(out)]) == 0
    assert (out / "f1_shift-grid.svg").exists()
    assert main(["score", "--out", str(tmp_path / "nothing")]) == 2

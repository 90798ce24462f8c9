import itertools

import numpy as np
import pytest

from bada.envs import ChangeSchedule
from bada.metrics import aggregate, f1_score, score_detections, summarize_rewards


def best_matching_size(truth, detected, window):
    """Maximum one-to-one matching by exhaustive search."""
    best = 0
    for k in range(min(len(truth), len(detected)), 0, -1):
        for ts in itertools.combinations(truth, k):
            for ds in itertools.permutations(detected, k):
                if all(abs(t - d) <= window for t, d in zip(ts, ds)):
                    return k
    return best


def test_hand_enumerated_examples():
    s = score_detections([100], [102], window=5)
    assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)
    for w in (0, 3, 100):
        s = score_detections([100], [], window=w)
        assert s.recall == 0.0 and s.f1 == 0.0
    s = score_detections([40, 80], [41, 60, 81], window=3)
    assert (s.true_positives, s.false_positives, s.false_negatives) == (2, 1, 0)
    assert s.precision == 2 / 3 and s.recall == 1.0
    assert s.f1 == pytest.approx(0.8, abs=1e-12)
    assert s.matches == [(40, 41), (80, 81)]


def test_f1_formula():
    assert abs(f1_score(0.8, 1.0) - 16 / 18) <= 1e-12
    assert f1_score(0.0, 0.0) == 0.0
    assert f1_score(1.0, 1.0) == 1.0


def test_one_detection_matches_one_change():
    s = score_detections([10, 11], [10], window=3)
    assert s.true_positives == 1 and s.false_negatives == 1


def test_greedy_matching_is_maximal_on_random_cases():
    r = np.random.default_rng(0)
    for _ in range(300):
        truth = sorted(r.choice(60, size=r.integers(1, 4), replace=False).tolist())
        det = sorted(r.choice(60, size=r.integers(0, 5), replace=False).tolist())
        s = score_detections(truth, det, window=3)
        assert s.true_positives == best_matching_size(truth, det, 3)


def test_reward_summary_constant():
    reports = [{"epoch": e, "mean_reward": 0.5, "n_episodes": 4} for e in range(30)]
    s = summarize_rewards(reports, [10], recovery_window=5)
    assert s.cumulative == pytest.approx(0.5 * 30 * 4)
    assert s.recovery_mean == 0.5


def test_recovery_window_truncated_at_run_end():
    reports = [{"epoch": e, "mean_reward": float(e), "n_episodes": 1} for e in range(10)]
    s = summarize_rewards(reports, ChangeSchedule([]), recovery_window=20)
    assert s.recovery_means == [] and np.isnan(s.recovery_mean)
    s = summarize_rewards(reports, [7], recovery_window=20)
    assert s.recovery_means == [8.0]  # mean of epochs 7, 8, 9


def test_identical_reports_identical_summaries():
    reports = [{"epoch": e, "mean_reward": np.sin(e), "n_episodes": 3} for e in range(20)]
    a = summarize_rewards(reports, [5, 12]).to_dict()
    b = summarize_rewards(list(reports), [5, 12]).to_dict()
    assert a == b


def test_aggregate():
    m, s = aggregate([1.0, 2.0, 3.0])
    assert m == 2.0 and s == pytest.approx(np.std([1, 2, 3]))
    assert all(np.isnan(aggregate([])))

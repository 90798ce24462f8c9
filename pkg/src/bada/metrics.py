"""Detection F1 under tolerance-window matching, and reward summaries."""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np


@dataclass
class DetectionScore:
    precision: float
    recall: float
    f1: float
    matches: List[Tuple[int, int]] = field(default_factory=list)
    tolerance_window: int = 3
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0

    def to_dict(self):
        d = dict(self.__dict__)
        d["matches"] = [list(m) for m in self.matches]
        return d


def f1_score(precision, recall):
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def score_detections(truth, detected, window=3):
    """Greedy earliest-first one-to-one matching within ``window`` epochs.

    Precision of an empty detection list is 0 (and so is F1), as is recall
    of an empty truth list.
    """
    truth = sorted(int(c) for c in truth)
    detected = sorted(int(c) for c in detected)
    used = [False] * len(detected)
    matches = []
    for c in truth:
        for j, d in enumerate(detected):
            if not used[j] and abs(d - c) <= window:
                used[j] = True
                matches.append((c, d))
                break
    tp = len(matches)
    fp = len(detected) - tp
    fn = len(truth) - tp
    precision = tp / len(detected) if detected else 0.0
    recall = tp / len(truth) if truth else 0.0
    return DetectionScore(
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        matches=matches,
        tolerance_window=window,
        true_positives=tp,
        false_positives=fp,
        false_negatives=fn,
    )


@dataclass
class RewardSummary:
    per_epoch: np.ndarray
    cumulative: float
    recovery_means: List[float]
    recovery_window: int

    @property
    def recovery_mean(self):
        return float(np.mean(self.recovery_means)) if self.recovery_means else float("nan")

    def to_dict(self):
        return {
            "per_epoch": [float(r) for r in self.per_epoch],
            "cumulative": self.cumulative,
            "recovery_means": list(self.recovery_means),
            "recovery_mean": self.recovery_mean,
            "recovery_window": self.recovery_window,
        }


def _field(report, name):
    return report[name] if isinstance(report, dict) else getattr(report, name)


def summarize_rewards(epoch_reports, truth, recovery_window=20):
    """Cumulative reward and mean reward over the window after each change.

    ``truth`` is a list of change epochs (or a ChangeSchedule). Windows that
    run past the end of the run are truncated.
    """
    change_epochs = getattr(truth, "change_epochs", truth)
    epochs = np.array([_field(r, "epoch") for r in epoch_reports])
    rewards = np.array([_field(r, "mean_reward") for r in epoch_reports], dtype=float)
    episodes = np.array([_field(r, "n_episodes") for r in epoch_reports], dtype=float)
    cumulative = float(np.sum(rewards * episodes))
    recovery = []
    for c in change_epochs:
        mask = (epochs >= c) & (epochs < c + recovery_window)
        if mask.any():
            recovery.append(float(rewards[mask].mean()))
    return RewardSummary(rewards, cumulative, recovery, recovery_window)


def aggregate(values):
    """Mean and (population) standard deviation across seeds."""
    arr = np.asarray(sorted(values), dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std())

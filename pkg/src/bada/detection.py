"""Change-point detectors over successive behavior batches.

The main detector runs a two-sample permutation test on the exact W1
distance between the current and previous epoch's embeddings. Two
baselines share the same plumbing: a permutation test on a k-NN KL
divergence estimate, and a short-vs-long reward window gap.
"""

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator

from ._validation import check_points, check_probability, check_same_dim
from .transport import w1_value

NEVER = 10**9


@dataclass(frozen=True)
class PermutationTestConfig:
    n_permutations: int = 100
    alpha: float = 0.05
    rng_seed: int = 0
    refractory_epochs: int = 3
    # (1 + #{T_e >= T}) / (1 + E) instead of the plain exceedance fraction
    smoothed: bool = False

    def __post_init__(self):
        if int(self.n_permutations) < 19:
            raise ValueError("n_permutations must be >= 19")
        check_probability(self.alpha, "alpha")
        if self.refractory_epochs < 0:
            raise ValueError("refractory_epochs must be >= 0")


@dataclass
class DetectionEvent:
    epoch: int
    p_value: Optional[float]
    statistic: float
    delta: float
    detector: str

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict())


@dataclass
class DetectorState:
    previous_batch: Optional[np.ndarray] = None
    epochs_since_last_detection: int = NEVER
    reward_history: deque = field(default_factory=deque)
    last_p_value: Optional[float] = None
    last_statistic: Optional[float] = None


def _knn_kl(d_pp, d_pq, dim, k, min_dist):
    n, m = d_pq.shape
    d_pp = d_pp.copy()
    np.fill_diagonal(d_pp, np.inf)
    rho = np.partition(d_pp, k - 1, axis=1)[:, k - 1]
    nu = np.partition(d_pq, k - 1, axis=1)[:, k - 1]
    rho = np.maximum(rho, min_dist)
    nu = np.maximum(nu, min_dist)
    est = dim * np.mean(np.log(nu / rho)) + np.log(m / (n - 1))
    return max(float(est), 0.0)


def knn_kl_divergence(p, q, k=1, min_dist=1e-12):
    """k-NN estimate of KL(p || q) from samples (Wang, Kulkarni & Verdu).

    Clamped at zero, the lower end of the divergence's range; distances are
    floored at ``min_dist`` so duplicated points stay finite.
    """
    p = check_points(p)
    q = check_points(q)
    check_same_dim(p, q)
    n, m = len(p), len(q)
    if n < k + 1 or m < k:
        raise ValueError(f"need at least k+1={k + 1} points per batch for k-NN KL")
    return _knn_kl(cdist(p, p), cdist(p, q), p.shape[1], k, min_dist)


def _w1_statistic(D, idx_a, idx_b):
    return w1_value(D[np.ix_(idx_a, idx_b)])


def _make_kl_statistic(dim, k):
    def stat(D, idx_a, idx_b):
        return _knn_kl(D[np.ix_(idx_a, idx_a)], D[np.ix_(idx_a, idx_b)], dim, k, 1e-12)

    return stat


def permutation_test(current, previous, cfg=PermutationTestConfig(), statistic=None, rng=None):
    """Two-sample permutation test; returns ``(p_value, T)``.

    ``T`` is the statistic on the observed split (exact W1 by default). The
    pooled points are shuffled ``cfg.n_permutations`` times and re-split at
    the original sizes; ties ``T_e == T`` count as exceedances.
    ``statistic(D, idx_a, idx_b)`` receives the pooled pairwise distance
    matrix and the two index sets.
    """
    a = check_points(current)
    b = check_points(previous)
    check_same_dim(a, b)
    n, m = len(a), len(b)
    pooled = np.vstack([a, b])
    D = cdist(pooled, pooled)
    stat = statistic or _w1_statistic
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    T = stat(D, np.arange(n), np.arange(n, n + m))
    E = int(cfg.n_permutations)
    exceed = 0
    for _ in range(E):
        perm = rng.permutation(n + m)
        if stat(D, perm[:n], perm[n:]) >= T:
            exceed += 1
    if cfg.smoothed:
        p = (1 + exceed) / (1 + E)
    else:
        p = exceed / E
    return p, T


def _epoch_rng(cfg, epoch):
    return np.random.default_rng([cfg.rng_seed, int(epoch)])


def _permutation_detect(current, state, cfg, statistic, name, epoch, delta_fn=None):
    points = check_points(current)
    if epoch is None:
        epoch = getattr(current, "epoch_index", 0)
    if state.previous_batch is None:
        state.previous_batch = points
        return None, None, None
    previous = state.previous_batch
    p, T = permutation_test(points, previous, cfg, statistic=statistic, rng=_epoch_rng(cfg, epoch))
    state.last_p_value, state.last_statistic = float(p), float(T)
    event = None
    if p <= cfg.alpha and state.epochs_since_last_detection >= cfg.refractory_epochs:
        delta = T if delta_fn is None else delta_fn(points, previous)
        event = DetectionEvent(int(epoch), float(p), float(T), float(delta), name)
        state.epochs_since_last_detection = 0
    else:
        state.epochs_since_last_detection += 1
    state.previous_batch = points
    return event, p, T


def bada_detect(current, state, cfg=PermutationTestConfig(), epoch=None):
    """W1 permutation-test detector; updates ``state`` in place."""
    event, _, _ = _permutation_detect(current, state, cfg, None, "bada", epoch)
    return event


def kl_knn_detect(current, state, cfg=PermutationTestConfig(), k=1, epoch=None):
    """Permutation test on a k-NN KL divergence estimate (Permu-KL)."""
    points = check_points(current)
    if len(points) < k + 1:
        raise ValueError(f"batch too small for k={k} nearest neighbours")
    if state.previous_batch is not None and len(state.previous_batch) < k + 1:
        raise ValueError(f"batch too small for k={k} nearest neighbours")
    stat = _make_kl_statistic(points.shape[1], k)
    event, _, _ = _permutation_detect(points, state, cfg, stat, "permu_kl", epoch)
    return event


def reward_gap_detect(recent_rewards, state, short_window=5, long_window=50,
                      threshold=1.0, refractory_epochs=0, epoch=0):
    """Short-vs-long reward window detector.

    Appends ``recent_rewards`` to the state's history, then fires when
    ``mean(short) < mean(long) - threshold * std(long)``. ``delta`` is the
    standardized gap; there is no p-value.
    """
    if not long_window > short_window >= 1:
        raise ValueError("need long_window > short_window >= 1")
    hist = state.reward_history
    if hist.maxlen != long_window:
        hist = deque(hist, maxlen=long_window)
        state.reward_history = hist
    hist.extend(float(r) for r in np.ravel(recent_rewards))
    if len(hist) < long_window:
        state.epochs_since_last_detection += 1
        return None
    window = np.asarray(hist)
    long_mean = window.mean()
    long_std = window.std()
    short_mean = window[-short_window:].mean()
    gap = long_mean - short_mean
    state.last_statistic = float(gap)
    event = None
    if short_mean < long_mean - threshold * long_std and state.epochs_since_last_detection >= refractory_epochs:
        z = gap / long_std if long_std > 0 else float("inf")
        event = DetectionEvent(int(epoch), None, float(gap), float(z), "reward_gap")
        state.epochs_since_last_detection = 0
    else:
        state.epochs_since_last_detection += 1
    return event


class _PermutationDetector(BaseEstimator):
    name = "permutation"

    def __init__(self, n_permutations=100, alpha=0.05, refractory_epochs=3,
                 smoothed=False, random_state=0):
        self.n_permutations = n_permutations
        self.alpha = alpha
        self.refractory_epochs = refractory_epochs
        self.smoothed = smoothed
        self.random_state = random_state

    @property
    def config(self):
        return PermutationTestConfig(
            n_permutations=self.n_permutations,
            alpha=self.alpha,
            rng_seed=self.random_state,
            refractory_epochs=self.refractory_epochs,
            smoothed=self.smoothed,
        )

    def fit(self, batch=None, y=None):
        """Reset state; ``batch`` (optional) becomes the previous epoch."""
        self.state_ = DetectorState()
        if batch is not None:
            self.state_.previous_batch = check_points(batch)
        self.events_ = []
        return self

    def _detect(self, batch, epoch):
        raise NotImplementedError

    def update(self, batch, epoch, rewards=None):
        """Test ``batch`` against the stored previous batch, then store it."""
        if not hasattr(self, "state_"):
            self.fit()
        event = self._detect(batch, epoch)
        if event is not None:
            self.events_.append(event)
        return event


class WassersteinChangeDetector(_PermutationDetector):
    """Threshold-free detector: W1 permutation test between adjacent epochs."""

    name = "bada"

    def _detect(self, batch, epoch):
        return bada_detect(batch, self.state_, self.config, epoch=epoch)

    def test(self, current, previous):
        return permutation_test(current, previous, self.config)


class KLChangeDetector(_PermutationDetector):
    name = "permu_kl"

    def __init__(self, n_permutations=100, alpha=0.05, refractory_epochs=3,
                 smoothed=False, random_state=0, k=1):
        super().__init__(n_permutations, alpha, refractory_epochs, smoothed, random_state)
        self.k = k

    def _detect(self, batch, epoch):
        return kl_knn_detect(batch, self.state_, self.config, k=self.k, epoch=epoch)


class RewardGapDetector(BaseEstimator):
    name = "reward_gap"

    def __init__(self, short_window=5, long_window=50, threshold=1.0, refractory_epochs=3):
        self.short_window = short_window
        self.long_window = long_window
        self.threshold = threshold
        self.refractory_epochs = refractory_epochs

    def fit(self, batch=None, y=None):
        self.state_ = DetectorState(reward_history=deque(maxlen=self.long_window))
        self.events_ = []
        return self

    def update(self, batch, epoch, rewards=None):
        if not hasattr(self, "state_"):
            self.fit()
        if rewards is None:
            raise ValueError("reward-gap detector needs episode rewards")
        event = reward_gap_detect(
            rewards, self.state_, self.short_window, self.long_window,
            self.threshold, self.refractory_epochs, epoch,
        )
        if event is not None:
            self.events_.append(event)
        return event

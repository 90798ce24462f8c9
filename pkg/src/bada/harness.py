"""Experiment driver: the detect-and-adapt training loop and its baselines.

Per epoch the loop collects trajectories, embeds them, tests for a change
against the previous epoch's embeddings, updates the policy (with the
adaptation term if a change was flagged), and saves the embeddings for
the next test. The change schedule lives only here and in the evaluator.
"""

import csv
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .behavior import BehaviorEmbedding, Trajectory
from .detection import DetectionEvent, KLChangeDetector, RewardGapDetector, WassersteinChangeDetector
from .envs import SCENARIOS, GridEnv, advance_schedule, make_scenario
from .exceptions import ConfigError, NumericalError
from .metrics import score_detections, summarize_rewards
from .policy import (
    AdamState,
    PolicyParams,
    UpdateConfig,
    act_batch,
    init_params,
    set_adaptation_anchor,
    update_step,
)
from .transport import w1_exact

log = logging.getLogger(__name__)

METHODS = ("bada", "no_adapt", "restart", "permu_kl", "reward_gap")
DETECTING = {"bada", "permu_kl", "reward_gap"}

# named sub-streams of the master seed
STREAMS = {"env": 1, "policy_init": 2, "sampling": 3, "permutation": 4, "embedding": 5}


@dataclass
class RunConfig:
    env: str = "shift-grid"
    change_epochs: List[int] = field(default_factory=lambda: [40])
    magnitude: Optional[float] = None
    method: str = "bada"
    epochs: int = 80
    trajectories_per_epoch: int = 16
    seed: int = 0
    # detection
    n_permutations: int = 100
    alpha: float = 0.05
    refractory_epochs: int = 3
    smoothed_p_value: bool = False
    kl_k: int = 1
    gap_short_window: int = 5
    gap_long_window: int = 50
    gap_threshold: float = 1.0
    # adaptation
    known_change_points: bool = False
    delta_decay_epochs: Optional[int] = None
    # policy / optimizer
    gamma: float = 0.99
    lam: float = 0.95
    learning_rate: float = 1e-3
    value_learning_rate: float = 1e-3
    minor_epochs: int = 4
    max_grad_norm: float = 0.5
    entropy_coef: float = 0.01
    policy_hidden: List[int] = field(default_factory=lambda: [32])
    value_hidden: List[int] = field(default_factory=lambda: [32])
    # embedding
    embed_hidden: List[int] = field(default_factory=lambda: [32, 32])
    latent_dim: int = 8
    embed_gain: float = 1.0
    embed_output_scale: float = 1.0
    include_reward: bool = True
    # entropic OT for the training terms
    ot_rel_epsilon: float = 0.05
    ot_max_iter: int = 500
    ot_tol: float = 1e-6
    # output
    out_dir: Optional[str] = None
    checkpoint: bool = False
    permutation_seed: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.env not in SCENARIOS:
            raise ConfigError(f"unknown env {self.env!r}; choose from {SCENARIOS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.epochs < 1 or self.trajectories_per_epoch < 2:
            raise ConfigError("need epochs >= 1 and trajectories_per_epoch >= 2")
        if self.n_permutations < 19:
            raise ConfigError("n_permutations must be >= 19")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if sorted(set(self.change_epochs)) != list(self.change_epochs):
            raise ConfigError("change_epochs must be strictly increasing")
        if any(c < 1 for c in self.change_epochs):
            raise ConfigError("change epochs must be >= 1")
        if self.refractory_epochs < 0:
            raise ConfigError("refractory_epochs must be >= 0")

    def sub_seed(self, stream):
        if stream == "permutation" and self.permutation_seed is not None:
            return int(self.permutation_seed)
        seq = np.random.SeedSequence([int(self.seed), STREAMS[stream]])
        return int(seq.generate_state(1)[0])

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad config value: {exc}") from exc

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def update_config(self):
        return UpdateConfig(
            learning_rate=self.learning_rate,
            value_learning_rate=self.value_learning_rate,
            minor_epochs=self.minor_epochs,
            max_grad_norm=self.max_grad_norm,
            ot_rel_epsilon=self.ot_rel_epsilon,
            ot_max_iter=self.ot_max_iter,
            ot_tol=self.ot_tol,
            entropy_coef=self.entropy_coef,
        )


@dataclass
class EpochReport:
    epoch: int
    mean_reward: float
    n_episodes: int
    mean_length: float
    statistic: Optional[float]
    p_value: Optional[float]
    detected: bool
    delta: float
    objective: dict
    wall_ms: float

    def to_dict(self):
        return dataclasses.asdict(self)


# -- building blocks ------------------------------------------------------------

def build_detector(cfg):
    perm_seed = cfg.sub_seed("permutation")
    if cfg.method == "bada" and not cfg.known_change_points:
        return WassersteinChangeDetector(cfg.n_permutations, cfg.alpha, cfg.refractory_epochs,
                                         cfg.smoothed_p_value, perm_seed).fit()
    if cfg.method == "permu_kl":
        return KLChangeDetector(cfg.n_permutations, cfg.alpha, cfg.refractory_epochs,
                                cfg.smoothed_p_value, perm_seed, k=cfg.kl_k).fit()
    if cfg.method == "reward_gap":
        return RewardGapDetector(cfg.gap_short_window, cfg.gap_long_window,
                                 cfg.gap_threshold, cfg.refractory_epochs).fit()
    return None


def build_embedding(cfg, obs_dim, n_actions):
    return BehaviorEmbedding(
        n_actions=n_actions,
        hidden_sizes=tuple(cfg.embed_hidden),
        latent_dim=cfg.latent_dim,
        include_reward=cfg.include_reward,
        weight_gain=cfg.embed_gain,
        output_scale=cfg.embed_output_scale,
        random_state=cfg.sub_seed("embedding"),
    ).fit(obs_dim=obs_dim)


def build_params(cfg, spec, init_seed):
    return init_params(spec.obs_dim, spec.n_actions, tuple(cfg.policy_hidden),
                       tuple(cfg.value_hidden), cfg.gamma, cfg.lam, init_seed)


def collect_trajectories(envs, params, rng, epoch):
    """Run one episode in each environment, stepping them in lockstep."""
    M = len(envs)
    obs = [env.reset() for env in envs]
    buf = [{"s": [], "a": [], "r": [], "lp": [], "d": []} for _ in range(M)]
    active = list(range(M))
    while active:
        states = np.stack([obs[i] for i in active])
        actions, log_probs = act_batch(params, states, rng)
        still = []
        for k, i in enumerate(active):
            b = buf[i]
            b["s"].append(obs[i])
            b["a"].append(actions[k])
            b["lp"].append(log_probs[k])
            o, r, done = envs[i].step(actions[k])
            b["r"].append(r)
            b["d"].append(done)
            obs[i] = o
            if not done:
                still.append(i)
        active = still
    return [Trajectory(b["s"], b["a"], b["r"], b["lp"], b["d"], epoch) for b in buf]


class _JsonLines:
    def __init__(self, path):
        self.fh = open(path, "w") if path else None

    def write(self, obj):
        if self.fh:
            self.fh.write(json.dumps(obj) + "\n")
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def _save_checkpoint(out_dir, epoch, params):
    ckpt = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt, exist_ok=True)
    arrays = [p for layer in params.policy + params.value for p in layer]
    flat = np.concatenate([a.ravel() for a in arrays])
    stem = os.path.join(ckpt, f"epoch_{epoch:04d}")
    flat.astype("<f8").tofile(stem + ".bin")
    with open(stem + ".json", "w") as fh:
        json.dump({**params.to_dict(), "epoch": epoch, "dtype": "<f8",
                   "n_values": int(flat.size)}, fh)


def load_checkpoint(stem):
    """Rebuild policy and value weights from ``<stem>.json`` + ``<stem>.bin``.

    Optimizer moments are not stored; the returned params start fresh ones.
    """
    with open(stem + ".json") as fh:
        meta = json.load(fh)
    flat = np.fromfile(stem + ".bin", dtype=meta["dtype"])
    if flat.size != meta["n_values"]:
        raise ValueError(f"checkpoint {stem}.bin holds {flat.size} values, expected {meta['n_values']}")
    pos = 0

    def take(shapes):
        nonlocal pos
        layers = []
        for layer_shapes in shapes:
            layer = []
            for shape in layer_shapes:
                n = int(np.prod(shape))
                layer.append(flat[pos:pos + n].reshape(shape).astype(np.float64))
                pos += n
            layers.append(layer)
        return layers

    policy = take(meta["policy_shapes"])
    value = take(meta["value_shapes"])
    return PolicyParams(policy, value, AdamState.zeros_like(policy), AdamState.zeros_like(value),
                        gamma=meta["gamma"], lam=meta["lam"])


# -- the loop ---------------------------------------------------------------------

def run(cfg, trace=None):
    """Run one configuration and return its list of :class:`EpochReport`.

    ``trace`` (a list) receives the per-epoch call order for auditing.
    """
    cfg.validate()
    base_spec, schedule = make_scenario(cfg.env, cfg.change_epochs, cfg.magnitude,
                                        seed=cfg.sub_seed("env"))
    truth = set(schedule.change_epochs)
    env_seeds = np.random.SeedSequence(cfg.sub_seed("env")).spawn(cfg.trajectories_per_epoch)
    envs = [GridEnv(base_spec, seed=s) for s in env_seeds]
    for env in envs:
        advance_schedule(env, 0, schedule)
    sampling_rng = np.random.default_rng(cfg.sub_seed("sampling"))
    init_seq = np.random.SeedSequence(cfg.sub_seed("policy_init"))
    params = build_params(cfg, base_spec, init_seq)
    embedding = build_embedding(cfg, base_spec.obs_dim, base_spec.n_actions)
    detector = build_detector(cfg)
    ucfg = cfg.update_config

    out = cfg.out_dir
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "config.json"), "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2)
        with open(os.path.join(out, "schedule.json"), "w") as fh:
            json.dump(schedule.to_dict(), fh)
    epoch_log = _JsonLines(out and os.path.join(out, "epochs.jsonl"))
    event_log = _JsonLines(out and os.path.join(out, "events.jsonl"))

    def mark(step):
        if trace is not None:
            trace.append(step)

    reports = []
    prev_batch = None
    anchor = None
    n_restarts = 0
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            if cfg.method == "restart" and epoch in truth:
                n_restarts += 1
                params = build_params(cfg, base_spec, init_seq.spawn(n_restarts)[-1])
            trajs = collect_trajectories(envs, params, sampling_rng, epoch)
            mark("collect")
            batch = embedding.embed_batch(trajs, epoch)
            mark("embed")
            rewards = [t.total_reward for t in trajs]

            event = None
            stat = pval = None
            if detector is not None:
                event = detector.update(batch, epoch, rewards)
                stat = detector.state_.last_statistic
                pval = detector.state_.last_p_value
                mark("test")
            elif cfg.method == "bada" and cfg.known_change_points and epoch in truth and prev_batch is not None:
                d = w1_exact(batch, prev_batch).distance
                event = DetectionEvent(epoch, None, d, d, "oracle")
                stat = d
                mark("test")
            if event is not None:
                if event.detector != "bada":
                    # swap only the detector; adaptation strength is always W(P_{c-1}, P_c)
                    event.delta = w1_exact(batch, prev_batch).distance
                anchor = set_adaptation_anchor(event, prev_batch)
                event_log.write(event.to_dict())

            delta = 0.0
            if anchor is not None:
                delta = anchor.delta
                if cfg.delta_decay_epochs:
                    delta *= max(0.0, 1.0 - (epoch - anchor.epoch) / cfg.delta_decay_epochs)
            params, terms = update_step(params, trajs, batch, prev_batch, anchor if delta > 0 else None,
                                        ucfg, delta=delta)
            mark("update_adapt" if delta > 0 else "update_base")
            prev_batch = batch
            mark("save")
            for env in envs:
                advance_schedule(env, epoch + 1, schedule)

            report = EpochReport(
                epoch=epoch,
                mean_reward=float(np.mean(rewards)),
                n_episodes=len(trajs),
                mean_length=float(np.mean([len(t) for t in trajs])),
                statistic=stat,
                p_value=pval,
                detected=event is not None,
                delta=float(delta),
                objective=terms.to_dict(),
                wall_ms=1000.0 * (time.perf_counter() - t0),
            )
            reports.append(report)
            epoch_log.write(report.to_dict())
            if out and cfg.checkpoint:
                _save_checkpoint(out, epoch, params)
    except NumericalError as exc:
        log.error("run aborted at epoch %d: %s", len(reports), exc)
        if out:
            with open(os.path.join(out, "failure.json"), "w") as fh:
                json.dump({"epoch": len(reports), "error": str(exc),
                           "residual": getattr(exc, "residual", None)}, fh)
        raise
    finally:
        epoch_log.close()
        event_log.close()

    if out:
        write_scores(out, cfg, reports, schedule.change_epochs)
    return reports


def run_bada(cfg, trace=None):
    if cfg.method != "bada":
        cfg = cfg.replace(method="bada")
    return run(cfg, trace)


def run_baseline(cfg, trace=None):
    if cfg.method == "bada":
        raise ConfigError("run_baseline needs a baseline method")
    return run(cfg, trace)


def detected_epochs(reports):
    return [r.epoch for r in reports if r.detected]


def score_run(cfg, reports, change_epochs=None, window=3, recovery_window=20):
    if change_epochs is None:
        change_epochs = cfg.change_epochs
    score = score_detections(change_epochs, detected_epochs(reports), window)
    rewards = summarize_rewards(reports, change_epochs, recovery_window)
    return score, rewards


def write_scores(out, cfg, reports, change_epochs):
    score, rewards = score_run(cfg, reports, change_epochs)
    doc = {
        "env": cfg.env,
        "method": cfg.method,
        "seed": cfg.seed,
        "detection": score.to_dict(),
        "rewards": rewards.to_dict(),
        "deltas": [r.delta for r in reports if r.detected],
    }
    with open(os.path.join(out, "scores.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    return doc


# -- suites -----------------------------------------------------------------------

SUMMARY_COLUMNS = ("env", "method", "seed", "f1", "precision", "recall",
                   "cumulative_reward", "recovery_mean")


def summary_row(cfg, reports):
    score, rewards = score_run(cfg, reports)
    return {
        "env": cfg.env,
        "method": cfg.method,
        "seed": cfg.seed,
        "f1": score.f1,
        "precision": score.precision,
        "recall": score.recall,
        "cumulative_reward": rewards.cumulative,
        "recovery_mean": rewards.recovery_mean,
    }


def write_summary(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def run_name(cfg, index):
    mag = "" if cfg.magnitude is None else f"_m{cfg.magnitude:g}"
    return f"{index:03d}_{cfg.env}_{cfg.method}{mag}_s{cfg.seed}"


def run_suite(configs, out_dir):
    """Run every config, then write ``summary.csv`` and SVG plots.

    A failing run is recorded in ``failures.json`` and the suite moves on.
    Returns ``(rows, failures)``.
    """
    from . import plotting

    os.makedirs(out_dir, exist_ok=True)
    rows, failures, results = [], [], []
    for i, cfg in enumerate(configs):
        run_dir = os.path.join(out_dir, run_name(cfg, i))
        cfg = cfg.replace(out_dir=run_dir)
        try:
            reports = run(cfg)
        except Exception as exc:  # noqa: BLE001 - suite keeps going
            log.exception("run %s failed", run_dir)
            failures.append({"run": os.path.basename(run_dir), "error": repr(exc)})
            continue
        rows.append(summary_row(cfg, reports))
        results.append((cfg, reports))
    write_summary(rows, os.path.join(out_dir, "summary.csv"))
    if failures:
        with open(os.path.join(out_dir, "failures.json"), "w") as fh:
            json.dump(failures, fh, indent=2)
    plotting.write_suite_plots(results, rows, out_dir)
    return rows, failures


def load_run(run_dir):
    cfg = RunConfig.from_json(os.path.join(run_dir, "config.json"))
    reports = []
    with open(os.path.join(run_dir, "epochs.jsonl")) as fh:
        for line in fh:
            line = line.strip()
            if line:
                reports.append(EpochReport(**json.loads(line)))
    with open(os.path.join(run_dir, "schedule.json")) as fh:
        change_epochs = [c["epoch"] for c in json.load(fh)["changes"]]
    return cfg, reports, change_epochs

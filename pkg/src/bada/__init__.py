"""Behavior-aware change detection and adaptation for non-stationary RL.

Trajectories are embedded into a latent space; a permutation test on the
Wasserstein-1 distance between consecutive epochs flags environment
changes, and the policy objective gains a term that pushes behavior away
from the pre-change distribution with strength set by the test statistic.
"""

from .behavior import BehaviorEmbedding, EmbeddingBatch, StepRecord, Trajectory, embed_batch, embed_trajectory
from .detection import (
    DetectionEvent,
    DetectorState,
    KLChangeDetector,
    PermutationTestConfig,
    RewardGapDetector,
    WassersteinChangeDetector,
    bada_detect,
    kl_knn_detect,
    knn_kl_divergence,
    permutation_test,
    reward_gap_detect,
)
from .envs import ChangeSchedule, EnvSpec, GridEnv, make_scenario, optimal_return
from .exceptions import ConfigError, ConvergenceError, NumericalError
from .harness import EpochReport, RunConfig, run, run_bada, run_baseline, run_suite
from .metrics import DetectionScore, score_detections, summarize_rewards
from .policy import PolicyParams, UpdateConfig, init_params, surrogate_objective, update_step
from .transport import TransportResult, cost_matrix, dual_regularizer_estimate, w1_entropic, w1_exact

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

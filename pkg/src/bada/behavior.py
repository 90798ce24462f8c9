"""Trajectories and the fixed random-feature behavior embedding."""

import json
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points
from .exceptions import ConfigError


class StepRecord(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    action_log_prob: float
    done: bool


class Trajectory:
    """One episode, stored column-wise.

    ``steps`` gives the row view as :class:`StepRecord` objects; the arrays
    are what the numeric code consumes.
    """

    def __init__(self, states, actions, rewards, log_probs, dones=None, epoch_index=0):
        self.states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        self.actions = np.asarray(actions, dtype=np.int64).ravel()
        self.rewards = np.asarray(rewards, dtype=np.float64).ravel()
        self.log_probs = np.asarray(log_probs, dtype=np.float64).ravel()
        H = len(self.actions)
        if dones is None:
            dones = np.zeros(H, dtype=bool)
        self.dones = np.asarray(dones, dtype=bool).ravel()
        self.epoch_index = int(epoch_index)
        if H == 0:
            raise ValueError("trajectory has no steps")
        if not (len(self.states) == len(self.rewards) == len(self.log_probs) == len(self.dones) == H):
            raise ValueError("trajectory columns have different lengths")
        if self.dones[:-1].any():
            raise ValueError("only the last step may be terminal")
        if np.any(self.log_probs > 0):
            raise ValueError("action log-probabilities must be <= 0")

    @classmethod
    def from_steps(cls, steps: Sequence[StepRecord], epoch_index=0):
        if not steps:
            raise ValueError("trajectory has no steps")
        return cls(
            states=[s.state for s in steps],
            actions=[s.action for s in steps],
            rewards=[s.reward for s in steps],
            log_probs=[s.action_log_prob for s in steps],
            dones=[s.done for s in steps],
            epoch_index=epoch_index,
        )

    @property
    def steps(self) -> List[StepRecord]:
        return [
            StepRecord(self.states[i], int(self.actions[i]), float(self.rewards[i]),
                       float(self.log_probs[i]), bool(self.dones[i]))
            for i in range(len(self))
        ]

    def __len__(self):
        return len(self.actions)

    @property
    def total_reward(self):
        return float(self.rewards.sum())

    def permuted(self, order):
        """Copy with steps reordered by ``order`` (terminal flags cleared)."""
        order = np.asarray(order)
        return Trajectory(
            self.states[order], self.actions[order], self.rewards[order],
            self.log_probs[order], None, self.epoch_index,
        )


@dataclass
class EmbeddingBatch:
    """Uniform empirical distribution over latent behavior vectors."""

    points: np.ndarray
    epoch_index: int = 0

    def __post_init__(self):
        self.points = check_points(self.points)

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]


class BehaviorEmbedding(TransformerMixin, BaseEstimator):
    """Fixed, randomly initialized feed-forward map from trajectories to R^d.

    Each step is featurized as ``state (+) one_hot(action) (+) reward``;
    features are mean-pooled over steps and pushed through ``tanh`` hidden
    layers and a linear output layer. Weights are never trained: ``fit``
    only draws them from ``random_state`` (normal, scaled by
    ``weight_gain / sqrt(fan_in)``; biases uniform in ``+-1/sqrt(fan_in)``).
    ``output_scale`` multiplies the output layer, so every distance between
    embeddings scales by it while permutation p-values do not change.

    Parameters
    ----------
    n_actions : int
    hidden_sizes : tuple of int
    latent_dim : int
        Output dimensionality, at least 2.
    include_state, include_action, include_reward : bool
        Which per-step feature blocks enter the pooled vector.
    weight_gain : float
    output_scale : float
    random_state : int
    """

    def __init__(
        self,
        n_actions=4,
        hidden_sizes=(32, 32),
        latent_dim=8,
        include_state=True,
        include_action=True,
        include_reward=True,
        weight_gain=1.0,
        output_scale=1.0,
        random_state=0,
    ):
        self.n_actions = n_actions
        self.hidden_sizes = hidden_sizes
        self.latent_dim = latent_dim
        self.include_state = include_state
        self.include_action = include_action
        self.include_reward = include_reward
        self.weight_gain = weight_gain
        self.output_scale = output_scale
        self.random_state = random_state

    def _feature_dim(self, obs_dim):
        return (
            obs_dim * self.include_state
            + self.n_actions * self.include_action
            + int(self.include_reward)
        )

    def fit(self, X=None, y=None, obs_dim=None):
        """Draw the map's weights.

        ``obs_dim`` is read from ``X`` (a list of trajectories) when not
        given explicitly.
        """
        if obs_dim is None:
            if not X:
                raise ConfigError("need trajectories or obs_dim to size the map")
            obs_dim = X[0].states.shape[1]
        if self.latent_dim < 2:
            raise ConfigError("latent_dim must be >= 2")
        in_dim = self._feature_dim(obs_dim)
        if in_dim == 0:
            raise ConfigError("no feature block selected")
        rng = np.random.default_rng(self.random_state)
        sizes = [in_dim, *self.hidden_sizes, self.latent_dim]
        self.weights_ = []
        self.biases_ = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights_.append(self.weight_gain * bound * rng.standard_normal((fan_in, fan_out)))
            self.biases_.append(rng.uniform(-bound, bound, size=fan_out))
        self.weights_[-1] *= self.output_scale
        self.biases_[-1] *= self.output_scale
        self.obs_dim_ = int(obs_dim)
        self.n_features_in_ = in_dim
        return self

    def featurize(self, traj):
        """Mean-pooled per-step feature vector of one trajectory."""
        if traj.states.shape[1] != self.obs_dim_:
            raise ConfigError(
                f"trajectory state dim {traj.states.shape[1]} != map input {self.obs_dim_}"
            )
        parts = []
        if self.include_state:
            parts.append(traj.states.mean(axis=0))
        if self.include_action:
            if traj.actions.min() < 0 or traj.actions.max() >= self.n_actions:
                raise ConfigError("action index outside the map's action count")
            parts.append(np.bincount(traj.actions, minlength=self.n_actions) / len(traj))
        if self.include_reward:
            parts.append([traj.rewards.mean()])
        return np.concatenate(parts)

    def forward(self, pooled):
        h = np.atleast_2d(pooled)
        last = len(self.weights_) - 1
        for i, (W, b) in enumerate(zip(self.weights_, self.biases_)):
            h = np.einsum("ni,ij->nj", h, W) + b
            if i < last:
                h = np.tanh(h)
        return h

    def transform(self, X):
        check_is_fitted(self, "weights_")
        if not X:
            raise ValueError("cannot embed an empty list of trajectories")
        pooled = np.stack([self.featurize(t) for t in X])
        return self.forward(pooled)

    def embed_batch(self, trajs, epoch_index=None):
        points = self.transform(trajs)
        if epoch_index is None:
            epoch_index = trajs[0].epoch_index
        return EmbeddingBatch(points, epoch_index)

    def to_dict(self):
        check_is_fitted(self, "weights_")
        return {
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
            "obs_dim": self.obs_dim_,
            "layers": [
                {"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights_, self.biases_)
            ],
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, doc):
        params = dict(doc["params"])
        params["hidden_sizes"] = tuple(params["hidden_sizes"])
        emb = cls(**params)
        emb.obs_dim_ = int(doc["obs_dim"])
        emb.weights_ = [np.asarray(l["weights"], dtype=np.float64).reshape(l["shape"]) for l in doc["layers"]]
        emb.biases_ = [np.asarray(l["bias"], dtype=np.float64) for l in doc["layers"]]
        emb.n_features_in_ = emb.weights_[0].shape[0]
        return emb

    @classmethod
    def from_json(cls, text_or_path):
        text = text_or_path
        if not text.lstrip().startswith("{"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


def embed_trajectory(traj, embedding):
    return embedding.transform([traj])[0]


def embed_batch(trajs, embedding):
    return embedding.embed_batch(trajs)

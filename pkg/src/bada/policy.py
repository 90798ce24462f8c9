"""Categorical MLP policy and value function with analytic gradients.

The training objective is

    F(theta) = R(theta) - W(P_theta, P_prev) + delta * W(P_theta, P_pre)

where ``R`` is the importance-weighted advantage surrogate and the two
distances are dual estimates built from entropic OT potentials. Sampled
trajectories (and so their embeddings) do not depend on ``theta``; the
distance terms depend on it through the likelihood ratio of each step.
With potentials held fixed, each W term is

    mean(f_cur) - mean(f_ref) + mean_i (ratio_i - 1) * (f_cur[traj(i)] - mean(f_cur))

which equals the dual estimate at the collecting parameters and has the
score-function gradient of ``E_{tau ~ pi_theta}[f(tau)]``.
"""

import copy
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import NumericalError
from .transport import dual_regularizer_estimate, w1_entropic


# -- networks ---------------------------------------------------------------

def init_mlp(sizes, rng, out_scale=1.0):
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = 1.0 / np.sqrt(fan_in)
        if i == len(sizes) - 2:
            scale *= out_scale
        W = scale * rng.standard_normal((fan_in, fan_out))
        layers.append([W, np.zeros(fan_out)])
    return layers


def mlp_forward(layers, x):
    """Forward pass with tanh hidden units; returns ``(output, cache)``.

    Uses einsum so each row's result is independent of the batch size.
    """
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cache = [h]
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        h = np.einsum("ni,ij->nj", h, W) + b
        if i < last:
            h = np.tanh(h)
        cache.append(h)
    return h, cache


def mlp_backward(layers, cache, grad_out):
    grads = [None] * len(layers)
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        h_in = cache[i]
        grads[i] = [h_in.T @ g, g.sum(axis=0)]
        if i > 0:
            g = (g @ layers[i][0].T) * (1.0 - cache[i] ** 2)
    return grads


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, layers):
        return cls(
            m=[[np.zeros_like(p) for p in layer] for layer in layers],
            v=[[np.zeros_like(p) for p in layer] for layer in layers],
        )


def adam_step(layers, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam ascent-agnostic step: ``param -= lr * adam(grad)``."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for layer, g_layer, m_layer, v_layer in zip(layers, grads, state.m, state.v):
        for j in range(len(layer)):
            m_layer[j] = beta1 * m_layer[j] + (1 - beta1) * g_layer[j]
            v_layer[j] = beta2 * v_layer[j] + (1 - beta2) * g_layer[j] ** 2
            layer[j] = layer[j] - lr * (m_layer[j] / c1) / (np.sqrt(v_layer[j] / c2) + eps)


def global_norm(grads):
    return float(np.sqrt(sum(float((g ** 2).sum()) for layer in grads for g in layer)))


# -- parameters -------------------------------------------------------------

@dataclass
class PolicyParams:
    policy: list
    value: list
    policy_opt: AdamState
    value_opt: AdamState
    gamma: float = 0.99
    lam: float = 0.95

    @property
    def n_actions(self):
        return self.policy[-1][0].shape[1]

    @property
    def obs_dim(self):
        return self.policy[0][0].shape[0]

    def copy(self):
        return copy.deepcopy(self)

    def flat_policy(self):
        return np.concatenate([p.ravel() for layer in self.policy for p in layer])

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "lam": self.lam,
            "policy_shapes": [[list(p.shape) for p in layer] for layer in self.policy],
            "value_shapes": [[list(p.shape) for p in layer] for layer in self.value],
            "optimizer_steps": [self.policy_opt.t, self.value_opt.t],
        }


def init_params(obs_dim, n_actions, hidden_sizes=(32,), value_hidden_sizes=(32,),
                gamma=0.99, lam=0.95, random_state=0):
    rng = np.random.default_rng(random_state)
    policy = init_mlp([obs_dim, *hidden_sizes, n_actions], rng, out_scale=0.01)
    value = init_mlp([obs_dim, *value_hidden_sizes, 1], rng)
    if not 0 < gamma <= 1 or not 0 <= lam <= 1:
        raise ValueError("need gamma in (0, 1] and lam in [0, 1]")
    return PolicyParams(
        policy=policy,
        value=value,
        policy_opt=AdamState.zeros_like(policy),
        value_opt=AdamState.zeros_like(value),
        gamma=gamma,
        lam=lam,
    )


def policy_log_probs(params, states):
    """Log-probabilities of every action, shape ``(n, n_actions)``."""
    logits, _ = mlp_forward(params.policy, states)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite policy logits")
    return log_softmax(logits)


def action_probabilities(params, states):
    return np.exp(policy_log_probs(params, states))


def value_of(params, states):
    out, _ = mlp_forward(params.value, states)
    return out[:, 0]


def act(params, state, rng):
    """Sample one action; returns ``(action, log_prob)``."""
    actions, log_probs = act_batch(params, np.atleast_2d(state), rng)
    return int(actions[0]), float(log_probs[0])


def act_batch(params, states, rng):
    logp = policy_log_probs(params, states)
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(len(states))[:, None] * cdf[:, -1:]
    actions = np.minimum((u >= cdf).sum(axis=1), logp.shape[1] - 1)
    return actions, logp[np.arange(len(states)), actions]


# -- advantages -------------------------------------------------------------

@dataclass
class AdvantageBatch:
    advantages: np.ndarray
    ratios: np.ndarray
    returns: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    traj_index: np.ndarray
    n_trajectories: int
    raw_advantages: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.actions)


def gae(rewards, values, gamma, lam):
    """Generalized advantage estimates for one episode (bootstrap value 0)."""
    H = len(rewards)
    adv = np.zeros(H)
    next_value = 0.0
    running = 0.0
    for t in range(H - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv


def compute_advantages(trajs, params, normalize=True):
    states = np.vstack([t.states for t in trajs])
    actions = np.concatenate([t.actions for t in trajs])
    old_logp = np.concatenate([t.log_probs for t in trajs])
    traj_index = np.concatenate([np.full(len(t), i) for i, t in enumerate(trajs)])
    values = value_of(params, states)
    raw = np.empty(len(actions))
    start = 0
    for t in trajs:
        stop = start + len(t)
        raw[start:stop] = gae(t.rewards, values[start:stop], params.gamma, params.lam)
        start = stop
    returns = raw + values
    adv = raw
    if normalize:
        std = raw.std()
        adv = (raw - raw.mean()) / (std if std > 1e-12 else 1.0)
    logp = policy_log_probs(params, states)[np.arange(len(actions)), actions]
    ratios = np.exp(logp - old_logp)
    return AdvantageBatch(adv, ratios, returns, states, actions, old_logp,
                          traj_index, len(trajs), raw)


# -- objective --------------------------------------------------------------

@dataclass
class ObjectiveTerms:
    surrogate_reward: float
    trust_penalty: float
    adaptation_bonus: float
    delta: float
    total: float
    # mean policy entropy; only enters the ascent direction, not ``total``
    entropy: float = 0.0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class DualTerm:
    """Frozen potentials of one W term, ready to be reweighted by ratios."""

    centered: np.ndarray  # per-trajectory potential minus its mean
    value: float  # dual estimate at the collecting parameters

    @classmethod
    def from_result(cls, current, reference, result):
        value = dual_regularizer_estimate(current, reference, result)
        f = result.potentials_mu
        return cls(f - f.mean(), value)

    @classmethod
    def zero(cls, n):
        return cls(np.zeros(n), 0.0)


@dataclass
class AdaptationAnchor:
    pre_batch: object
    delta: float
    epoch: int


def set_adaptation_anchor(event, saved_prev):
    """Replace any live anchor with the pre-change batch and delta = event.delta."""
    return AdaptationAnchor(saved_prev, float(event.delta), int(event.epoch))


def _objective_and_grad(params, batch, trust, adapt, delta, need_grad=True, entropy_coef=0.0):
    """Objective value, its terms, and gradient w.r.t. the policy layers.

    The gradient is that of ``total + entropy_coef * entropy``.
    """
    logits, cache = mlp_forward(params.policy, batch.states)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite policy logits")
    logp_all = log_softmax(logits)
    idx = np.arange(len(batch.actions))
    ratios = np.exp(logp_all[idx, batch.actions] - batch.old_log_probs)
    N = len(ratios)
    f_trust = trust.centered[batch.traj_index]
    f_adapt = adapt.centered[batch.traj_index]

    surrogate = float(np.mean(ratios * batch.advantages))
    trust_pen = trust.value + float(np.mean((ratios - 1.0) * f_trust))
    bonus = adapt.value + float(np.mean((ratios - 1.0) * f_adapt))
    total = surrogate - trust_pen + delta * bonus
    probs = np.exp(logp_all)
    ent = -np.sum(probs * logp_all, axis=1)
    terms = ObjectiveTerms(surrogate, trust_pen, bonus, float(delta), total, float(ent.mean()))
    if not need_grad:
        return terms, None

    weight = (batch.advantages - f_trust + delta * f_adapt) / N
    # d ratio / d logit_k = ratio * (onehot_k - p_k)
    g_logp = weight * ratios
    g_logits = -probs * g_logp[:, None]
    g_logits[idx, batch.actions] += g_logp
    if entropy_coef:
        # dH/dlogit_k = -p_k (log p_k + H)
        g_logits -= (entropy_coef / N) * probs * (logp_all + ent[:, None])
    grads = mlp_backward(params.policy, cache, g_logits)
    return terms, grads


def surrogate_objective(batch, current, prev, pre=None, delta=0.0, params=None,
                        ot_kwargs=None):
    """Objective terms at the batch's current ratios.

    ``current``/``prev``/``pre`` are embedding batches; ``prev`` may be None
    on the first epoch. ``pre`` must be given exactly when ``delta > 0``.
    """
    if delta > 0 and pre is None:
        raise ValueError("delta > 0 requires a pre-change batch")
    if pre is not None and delta < 0:
        raise ValueError("delta must be non-negative")
    trust, adapt = behavior_terms(current, prev, pre, ot_kwargs)
    if params is None:
        ratios = batch.ratios
        f_t = trust.centered[batch.traj_index]
        f_a = adapt.centered[batch.traj_index]
        surrogate = float(np.mean(ratios * batch.advantages))
        tp = trust.value + float(np.mean((ratios - 1.0) * f_t))
        bonus = adapt.value + float(np.mean((ratios - 1.0) * f_a))
        return ObjectiveTerms(surrogate, tp, bonus, float(delta), surrogate - tp + delta * bonus)
    terms, _ = _objective_and_grad(params, batch, trust, adapt, delta, need_grad=False)
    return terms


def behavior_terms(current, prev, pre, ot_kwargs=None):
    """Solve the entropic OT problems once and freeze their potentials."""
    ot_kwargs = ot_kwargs or {}
    n = len(current)
    if prev is None:
        trust = DualTerm.zero(n)
    else:
        trust = DualTerm.from_result(current, prev, w1_entropic(current, prev, **ot_kwargs))
    if pre is None:
        adapt = DualTerm.zero(n)
    else:
        adapt = DualTerm.from_result(current, pre, w1_entropic(current, pre, **ot_kwargs))
    return trust, adapt


@dataclass
class UpdateConfig:
    learning_rate: float = 1e-3
    value_learning_rate: float = 1e-3
    minor_epochs: int = 4
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True
    ot_rel_epsilon: float = 0.05
    ot_max_iter: int = 500
    ot_tol: float = 1e-6
    entropy_coef: float = 0.01

    @property
    def ot_kwargs(self):
        return {"rel_epsilon": self.ot_rel_epsilon, "max_iter": self.ot_max_iter, "tol": self.ot_tol}


def update_step(params, trajs, current, prev=None, anchor=None, cfg=None, delta=None):
    """Run ``cfg.minor_epochs`` gradient-ascent steps on F over one batch.

    ``anchor`` (an :class:`AdaptationAnchor`) switches on the adaptation
    term; ``delta`` overrides the anchor's coefficient (used for decay).
    Returns the updated parameters (a copy) and the objective terms at the
    last minor epoch, evaluated before its step.
    """
    cfg = cfg or UpdateConfig()
    params = params.copy()
    batch = compute_advantages(trajs, params, normalize=cfg.normalize_advantages)
    pre = None if anchor is None else anchor.pre_batch
    if delta is None:
        delta = 0.0 if anchor is None else anchor.delta
    trust, adapt = behavior_terms(current, prev, pre, cfg.ot_kwargs)

    terms = None
    for _ in range(cfg.minor_epochs):
        terms, grads = _objective_and_grad(params, batch, trust, adapt, delta,
                                           entropy_coef=cfg.entropy_coef)
        norm = global_norm(grads)
        if not np.isfinite(norm):
            raise NumericalError("non-finite policy gradient norm", residual=norm)
        if cfg.max_grad_norm and norm > cfg.max_grad_norm:
            scale = cfg.max_grad_norm / norm
            grads = [[g * scale for g in layer] for layer in grads]
        # ascend F by descending -F
        neg = [[-g for g in layer] for layer in grads]
        adam_step(params.policy, neg, params.policy_opt, cfg.learning_rate)

        v, vcache = mlp_forward(params.value, batch.states)
        err = v[:, 0] - batch.returns
        vgrads = mlp_backward(params.value, vcache, (2.0 / len(err)) * err[:, None])
        if not np.isfinite(global_norm(vgrads)):
            raise NumericalError("non-finite value gradient")
        adam_step(params.value, vgrads, params.value_opt, cfg.value_learning_rate)
    if terms is None:
        terms, _ = _objective_and_grad(params, batch, trust, adapt, delta, need_grad=False)
    return params, terms

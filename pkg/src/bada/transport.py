"""Wasserstein-1 distances between uniform empirical point clouds.

Two solvers with different jobs:

* :func:`w1_exact` solves the discrete transport LP exactly (an assignment
  problem when both clouds have the same size). It is deterministic and
  unbiased, which is what the permutation test statistic needs.
* :func:`w1_entropic` runs log-domain Sinkhorn iterations and returns dual
  potentials, used to build differentiable regularizers.

Potentials follow the Kantorovich-Rubinstein sign convention: a single
potential function is evaluated on both clouds, so that
``W ~= mean(potentials_mu) - mean(potentials_nu)``.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from ._validation import check_points, check_positive, check_same_dim
from .exceptions import ConvergenceError, NumericalError

EXACT = "exact"
ENTROPIC = "entropic"


@dataclass
class TransportResult:
    distance: float
    potentials_mu: Optional[np.ndarray] = None
    potentials_nu: Optional[np.ndarray] = None
    plan: Optional[np.ndarray] = None
    method: str = EXACT
    # dual objective value; equals `distance` up to solver tolerance for exact
    dual_value: Optional[float] = None
    n_iter: int = 0
    residual: float = 0.0
    epsilon: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def has_potentials(self):
        return self.potentials_mu is not None and self.potentials_nu is not None

    def to_dict(self):
        def _list(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "distance": self.distance,
            "dual_value": self.dual_value,
            "method": self.method,
            "epsilon": self.epsilon,
            "n_iter": self.n_iter,
            "residual": self.residual,
            "potentials_mu": _list(self.potentials_mu),
            "potentials_nu": _list(self.potentials_nu),
            "plan": _list(self.plan),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def cost_matrix(a, b):
    """Pairwise Euclidean ground costs between two point sets."""
    a = check_points(a, "a")
    b = check_points(b, "b")
    check_same_dim(a, b)
    return cdist(a, b, metric="euclidean")


def _exact_duals(C):
    """Optimal dual variables (u, v) of the uniform-marginal transport LP."""
    n, m = C.shape
    # primal: min <C, P>  s.t. row sums = 1/n, col sums = 1/m, P >= 0
    A_rows = np.kron(np.eye(n), np.ones((1, m)))
    A_cols = np.kron(np.ones((1, n)), np.eye(m))
    A_eq = np.vstack([A_rows, A_cols])
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalError(f"transport LP failed: {res.message}")
    y = res.eqlin.marginals
    return res.x.reshape(n, m), res.fun, y[:n], y[n:]


def w1_exact(a, b, potentials=False, C=None):
    """Exact Wasserstein-1 distance between uniform empirical distributions.

    Equal sizes are solved as a minimum-cost perfect assignment; otherwise
    the full LP with marginals ``1/n`` and ``1/m`` is solved. With
    ``potentials=True`` the dual LP solution is attached as well.
    """
    if C is None:
        C = cost_matrix(a, b)
    n, m = C.shape
    u = v = None
    dual = None
    if n == m:
        rows, cols = linear_sum_assignment(C)
        distance = float(C[rows, cols].sum() / n)
        plan = np.zeros((n, m))
        plan[rows, cols] = 1.0 / n
        if potentials:
            _, _, u, v = _exact_duals(C)
    else:
        plan, distance, u, v = _exact_duals(C)
        distance = float(distance)
        plan = np.clip(plan, 0.0, None)
        if not potentials:
            u = v = None
    if u is not None:
        dual = float(u.mean() + v.mean())
    return TransportResult(
        distance=distance,
        plan=plan,
        potentials_mu=u,
        potentials_nu=None if v is None else -v,
        method=EXACT,
        dual_value=dual,
    )


def w1_value(C):
    """Distance-only fast path used inside permutation loops."""
    n, m = C.shape
    if n == m:
        rows, cols = linear_sum_assignment(C)
        return float(C[rows, cols].sum() / n)
    return w1_exact(None, None, C=C).distance


def _f_from_g(g, C, log_b, eps):
    return -eps * logsumexp((g[None, :] - C) / eps + log_b[None, :], axis=1)


def _g_from_f(f, C, log_a, eps):
    return -eps * logsumexp((f[:, None] - C) / eps + log_a[:, None], axis=0)


def _log_plan(f, g, C, log_a, log_b, eps):
    return (f[:, None] + g[None, :] - C) / eps + log_a[:, None] + log_b[None, :]


def _newton_step(f, g, C, log_a, log_b, eps):
    """One damped Newton ascent step on the semi-dual objective in ``g``."""
    a, b = np.exp(log_a), np.exp(log_b)

    def semi_dual(g):
        f = _f_from_g(g, C, log_b, eps)
        return a @ f + b @ g, f

    value = a @ f + b @ g
    P = np.exp(_log_plan(f, g, C, log_a, log_b, eps))
    col = P.sum(axis=0)
    grad = b - col
    # negative Hessian; singular along the constant direction
    H = (np.diag(col) - P.T @ (P / a[:, None])) / eps
    direction = np.linalg.lstsq(H, grad, rcond=None)[0]
    slope = grad @ direction
    t = 1.0
    while t > 1e-10:
        new_value, new_f = semi_dual(g + t * direction)
        if new_value >= value + 1e-4 * t * slope:
            return new_f, g + t * direction
        t *= 0.5
    return f, g


def w1_entropic(
    a,
    b,
    epsilon=None,
    rel_epsilon=0.05,
    max_iter=500,
    tol=1e-6,
    eps_scaling=0.5,
    n_sinkhorn=50,
    C=None,
):
    """Entropy-regularized W1 via log-domain Sinkhorn with epsilon scaling.

    ``epsilon`` is absolute; when omitted it is ``rel_epsilon * mean(C)``.
    Sweeps start at ``mean(C)`` and shrink epsilon geometrically by
    ``eps_scaling`` (warm-starting the potentials) down to the target. At
    the target, up to ``n_sinkhorn`` plain alternating sweeps run; if the L1
    marginal violation is still above ``tol``, damped Newton steps on the
    semi-dual finish the solve (plain Sinkhorn stalls at small epsilon).
    ``max_iter`` bounds the total number of sweeps plus Newton steps.

    ``distance`` is the transport cost of the regularized plan; the dual
    objective is reported in ``dual_value``.
    """
    if C is None:
        C = cost_matrix(a, b)
    n, m = C.shape
    scale = float(C.mean())
    if epsilon is None:
        epsilon = rel_epsilon * scale if scale > 0 else rel_epsilon
    eps = check_positive(epsilon, "epsilon")

    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)

    n_iter = 0
    e = scale
    while eps_scaling and e > eps and n_iter < max_iter:
        f = _f_from_g(g, C, log_b, e)
        g = _g_from_f(f, C, log_a, e)
        e *= eps_scaling
        n_iter += 1

    residual = np.inf
    sweeps = 0
    while n_iter < max_iter:
        f_new = _f_from_g(g, C, log_b, eps)
        # after a g-sweep columns are exact; this is the row violation
        residual = float(np.abs(np.expm1((f - f_new) / eps)).sum() / n)
        f = f_new
        if residual < tol:
            break
        if sweeps < n_sinkhorn:
            g = _g_from_f(f, C, log_a, eps)
            sweeps += 1
        else:
            f, g = _newton_step(f, g, C, log_a, log_b, eps)
            g = _g_from_f(f, C, log_a, eps)
        n_iter += 1

    if not np.all(np.isfinite(f)) or not np.all(np.isfinite(g)):
        raise NumericalError("non-finite Sinkhorn potentials", residual=residual)
    if residual >= tol:
        raise ConvergenceError(
            f"Sinkhorn did not reach tol={tol:g} in {max_iter} iterations "
            f"(residual {residual:.3g})",
            residual=residual,
        )

    plan = np.exp(_log_plan(f, g, C, log_a, log_b, eps))
    distance = float((plan * C).sum())
    return TransportResult(
        distance=distance,
        potentials_mu=f,
        potentials_nu=-g,
        plan=plan,
        method=ENTROPIC,
        dual_value=float(f.mean() + g.mean()),
        n_iter=n_iter,
        residual=residual,
        epsilon=eps,
    )


def dual_regularizer_estimate(current, reference, result):
    """Dual estimate of W(current, reference) from fixed potentials.

    Mean potential over the current points minus mean potential over the
    reference points. Held fixed, the potentials make this linear in the
    per-point weights, so gradients only flow through ``current``.
    """
    if result is None or not result.has_potentials:
        raise ValueError("transport result carries no dual potentials")
    n = len(check_points(current))
    m = len(check_points(reference))
    if result.potentials_mu.shape != (n,) or result.potentials_nu.shape != (m,):
        raise ValueError("potentials were not computed for these batches")
    return float(result.potentials_mu.mean() - result.potentials_nu.mean())

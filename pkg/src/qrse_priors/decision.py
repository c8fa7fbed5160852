"""Prior-weighted logit decisions ``f[a|x] = p[a] exp(U[a,x]/T) / Z(x)``.

Every function accepts a scalar ``x`` (returning shape ``(n_actions,)``) or an
array of outcomes (returning shape ``(n_actions,) + x.shape``). All
evaluation happens in log space with max-subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import ActionSet, ModelError, UtilityModel, validate_probability_vector

DUAL_TOL = 1e-12
DUAL_MAX_ITER = 200


class DegeneratePrior(ModelError):
    pass


class ZeroPriorEntry(ModelError):
    pass


class AbsoluteContinuityViolation(ModelError):
    pass


class UnreachableUtility(ModelError):
    pass


class NonBinaryActionSet(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class DecisionContext:
    actions: ActionSet
    prior: np.ndarray
    utility: UtilityModel
    T: float

    def __post_init__(self):
        prior = validate_probability_vector(self.prior, self.actions.size)
        object.__setattr__(self, "prior", prior)
        if self.utility.n_actions != self.actions.size:
            raise ModelError("utility and action set disagree on the number of actions")
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ModelError(f"temperature must be positive and finite, got {self.T}")


def _log_weights(ctx: DecisionContext, x) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized log decision weights and the log of the prior (broadcast)."""
    u = ctx.utility.values(x)
    with np.errstate(divide="ignore"):
        logp = np.log(ctx.prior).reshape((-1,) + (1,) * (u.ndim - 1))
    return logp + u / ctx.T, logp


def log_decision_probabilities(ctx: DecisionContext, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ModelError("x must be finite")
    logits, _ = _log_weights(ctx, x)
    top = logits.max(axis=0)
    if np.any(np.isneginf(top)):
        raise DegeneratePrior("all prior mass sits on actions with -inf utility")
    log_z = top + np.log(np.exp(logits - top).sum(axis=0))
    return logits - log_z


def decision_probabilities(ctx: DecisionContext, x) -> np.ndarray:
    """Choice probabilities ``f[a|x]`` under prior ``ctx.prior`` at temperature ``ctx.T``.

    Actions with zero prior mass get probability zero.
    """
    return np.exp(log_decision_probabilities(ctx, x))


def shift_potential(ctx: DecisionContext) -> np.ndarray:
    """Additive potentials ``alpha_a = T log p[a]`` that reproduce the prior as a utility shift."""
    if np.any(ctx.prior <= 0):
        raise ZeroPriorEntry("shift potential is undefined for zero prior entries")
    return ctx.T * np.log(ctx.prior)


def shifted_decision_probabilities(ctx: DecisionContext, x) -> np.ndarray:
    """Same choice probabilities, computed as a uniform softmax of ``(U + alpha) / T``."""
    alpha = shift_potential(ctx)
    u = ctx.utility.values(x)
    z = (u + alpha.reshape((-1,) + (1,) * (u.ndim - 1))) / ctx.T
    return np.exp(z - logsumexp(z, axis=0))


def conditional_entropy(ctx: DecisionContext, x) -> np.ndarray | float:
    """Shannon entropy ``H[A|x]`` of the choice distribution, in nats (``0 log 0 = 0``)."""
    logf = log_decision_probabilities(ctx, x)
    f = np.exp(logf)
    terms = np.where(f > 0, -f * np.where(f > 0, logf, 0.0), 0.0)
    h = terms.sum(axis=0)
    return float(h) if h.ndim == 0 else h


def kl_from_prior(ctx: DecisionContext, x) -> np.ndarray | float:
    """Information acquired beyond the prior: ``KL(f[.|x] || p)`` in nats."""
    if np.any(ctx.prior <= 0):
        raise AbsoluteContinuityViolation("KL from prior needs a strictly positive prior")
    logf = log_decision_probabilities(ctx, x)
    f = np.exp(logf)
    logp = np.log(ctx.prior).reshape((-1,) + (1,) * (logf.ndim - 1))
    kl = np.where(f > 0, f * (logf - logp), 0.0).sum(axis=0)
    kl = np.maximum(kl, 0.0)
    return float(kl) if kl.ndim == 0 else kl


def _boltzmann(u: np.ndarray, beta: float) -> np.ndarray:
    z = beta * u
    return np.exp(z - logsumexp(z))


def _argmax_mass(u: np.ndarray) -> np.ndarray:
    best = u == u.max()
    return best / best.sum()


def dual_multiplier(u: np.ndarray, u_min: float, tol: float = DUAL_TOL,
                    max_iter: int = DUAL_MAX_ITER) -> float:
    """Inverse temperature ``beta >= 0`` at which the Boltzmann choice over payoffs ``u`` earns ``u_min``.

    Returns ``0`` when the constraint is slack and ``inf`` when it can only be met
    by a point mass on the best actions.
    """
    u = np.asarray(u, dtype=float)
    lo_u, hi_u = float(u.min()), float(u.max())
    if not lo_u - tol <= u_min <= hi_u + tol:
        raise UnreachableUtility(f"expected utility {u_min} outside [{lo_u}, {hi_u}]")
    if u_min <= float(u.mean()) or hi_u == lo_u:
        return 0.0
    if u_min >= hi_u - tol:
        return np.inf

    def gap(beta):
        return float(np.dot(_boltzmann(u, beta), u)) - u_min

    lo, hi = 0.0, 1.0
    while gap(hi) < 0:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            return np.inf
    beta = hi
    for _ in range(max_iter):
        beta = 0.5 * (lo + hi)
        g = gap(beta)
        if abs(g) < tol:
            break
        if g < 0:
            lo = beta
        else:
            hi = beta
    return beta


def dual_decision_probabilities(ctx: DecisionContext, x: float, u_min: float) -> np.ndarray:
    """Observer's solution: maximum-entropy choice with expected utility at least ``u_min``.

    The prior in ``ctx`` is ignored; the observer starts from a uniform prior.
    """
    u = ctx.utility.values(float(x))
    beta = dual_multiplier(u, u_min)
    if np.isinf(beta):
        return _argmax_mass(u)
    return _boltzmann(u, beta)


def mu_star_equivalent(prior, mu: float, T: float, entry: int = 0) -> float:
    """Indifference point that reproduces a binary prior-weighted curve under a uniform prior."""
    p = validate_probability_vector(prior)
    if p.size != 2:
        raise NonBinaryActionSet("the mu* shift exists only for two actions")
    if np.any(p <= 0):
        raise ZeroPriorEntry("mu* is undefined for a degenerate prior")
    return mu - 0.5 * T * np.log(p[entry] / p[1 - entry])

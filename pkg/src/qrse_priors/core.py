"""Shared domain types: action sets, probability vectors, utilities, grids, parameters.

Probability vectors are plain read-only ``numpy`` arrays that passed
:func:`validate_probability_vector`. Outcomes ``x`` are in percent per period
(``2.5`` means 2.5%).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

NORMALIZATION_TOL = 1e-12
MIN_TEMPERATURE = 1e-8


class ModelError(ValueError):
    """Base class for invalid model inputs."""


class NegativeEntry(ModelError):
    pass


class NotNormalized(ModelError):
    def __init__(self, deviation: float):
        super().__init__(f"probabilities sum to 1{deviation:+.3e}")
        self.deviation = deviation


class UnknownAction(ModelError):
    pass


@dataclass(frozen=True)
class ActionSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ModelError("an action set needs at least two actions")
        if any(not isinstance(lab, str) or not lab for lab in labels):
            raise ModelError("action labels must be non-empty strings")
        if len(set(labels)) != len(labels):
            raise ModelError(f"duplicate action labels in {labels}")

    @classmethod
    def binary(cls) -> "ActionSet":
        return cls(("buy", "sell"))

    @classmethod
    def ternary(cls) -> "ActionSet":
        return cls(("buy", "hold", "sell"))

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, action: int | str) -> int:
        """Resolve an action label or index to an index."""
        if isinstance(action, str):
            try:
                return self.labels.index(action)
            except ValueError:
                raise UnknownAction(f"unknown action {action!r}; have {self.labels}") from None
        idx = int(action)
        if not 0 <= idx < self.size:
            raise UnknownAction(f"action index {idx} out of range for {self.size} actions")
        return idx

    def __len__(self) -> int:
        return self.size


def validate_probability_vector(values: Sequence[float], size: Optional[int] = None,
                                tol: float = NORMALIZATION_TOL) -> np.ndarray:
    """Return ``values`` as a read-only float array if it is a probability vector.

    Raises
    ------
    NegativeEntry
        If any entry is negative (or not finite).
    NotNormalized
        If the entries do not sum to one within ``tol``.
    """
    p = np.array(values, dtype=float)
    if p.ndim != 1:
        raise ModelError("a probability vector must be one-dimensional")
    if size is not None and p.size != size:
        raise ModelError(f"expected {size} entries, got {p.size}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise NegativeEntry(f"probability vector has negative or non-finite entries: {p.tolist()}")
    deviation = float(p.sum()) - 1.0
    if abs(deviation) > tol:
        raise NotNormalized(deviation)
    p.setflags(write=False)
    return p


def uniform_vector(n: int) -> np.ndarray:
    p = np.full(n, 1.0 / n)
    p.setflags(write=False)
    return p


@dataclass(frozen=True)
class UtilityModel:
    """Action-conditional payoff ``U[a, x]``.

    ``binary-linear``: the entry action earns ``x - mu`` and the other action
    ``-(x - mu)``. ``ternary-linear``: over (buy, hold, sell) the entry action
    earns ``x - mu``, hold earns 0 and the exit action ``-(x - mu2)``, so
    ``mu`` is the buy/hold indifference point and ``mu2`` the sell/hold one.
    ``table``: ``payoff(x)`` returns an array of shape ``(n_actions,) + x.shape``.
    """

    kind: str
    n_actions: int
    mu: float = 0.0
    mu2: Optional[float] = None
    entry: int = 0
    hold: Optional[int] = None
    payoff: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "binary-linear":
            if self.n_actions != 2 or self.entry not in (0, 1):
                raise ModelError("binary-linear utility needs two actions and entry index 0 or 1")
        elif self.kind == "ternary-linear":
            if self.n_actions != 3 or self.hold is None or self.mu2 is None:
                raise ModelError("ternary-linear utility needs three actions, a hold index and mu2")
            if self.hold == self.entry or not {self.entry, self.hold} <= {0, 1, 2}:
                raise ModelError("entry and hold must be distinct valid indices")
        elif self.kind == "table":
            if self.payoff is None:
                raise ModelError("table utility needs a payoff callable")
        else:
            raise ModelError(f"unknown utility kind {self.kind!r}")

    @classmethod
    def binary(cls, mu: float, entry: int = 0) -> "UtilityModel":
        return cls("binary-linear", 2, mu=float(mu), entry=entry)

    @classmethod
    def ternary(cls, mu: float, mu2: float, entry: int = 0, hold: int = 1) -> "UtilityModel":
        return cls("ternary-linear", 3, mu=float(mu), mu2=float(mu2), entry=entry, hold=hold)

    @classmethod
    def constant(cls, values: Sequence[float]) -> "UtilityModel":
        """Table utility that ignores ``x``: action ``a`` always earns ``values[a]``."""
        u = np.asarray(values, dtype=float)

        def payoff(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(u.reshape((-1,) + (1,) * x.ndim), u.shape + x.shape).copy()

        return cls("table", len(u), payoff=payoff)

    @classmethod
    def table(cls, n_actions: int, payoff: Callable[[np.ndarray], np.ndarray]) -> "UtilityModel":
        return cls("table", n_actions, payoff=payoff)

    @property
    def exit(self) -> int:
        if self.kind == "binary-linear":
            return 1 - self.entry
        if self.kind == "ternary-linear":
            return ({0, 1, 2} - {self.entry, self.hold}).pop()
        raise ModelError("table utilities have no designated exit action")

    def values(self, x) -> np.ndarray:
        """Payoffs for every action, shape ``(n_actions,) + shape(x)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "table":
            u = np.asarray(self.payoff(x), dtype=float)
            if u.shape != (self.n_actions,) + x.shape:
                raise ModelError(f"payoff returned shape {u.shape}, expected {(self.n_actions,) + x.shape}")
            return u
        u = np.zeros((self.n_actions,) + x.shape)
        if self.kind == "binary-linear":
            u[self.entry] = x - self.mu
            u[self.exit] = -(x - self.mu)
        else:
            u[self.entry] = x - self.mu
            u[self.exit] = -(x - self.mu2)
        return u


def utility(model: UtilityModel, action: int, x: float) -> float:
    """``U[action, x]`` for a single action and outcome."""
    if not 0 <= action < model.n_actions:
        raise UnknownAction(f"action index {action} out of range for {model.n_actions} actions")
    if not np.isfinite(x):
        raise ModelError("x must be finite")
    return float(model.values(x)[action])


@dataclass(frozen=True, eq=False)
class Grid:
    """Outcome grid with composite-trapezoid quadrature weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        w = np.array(self.weights, dtype=float)
        if pts.ndim != 1 or pts.size < 32:
            raise ModelError("a grid needs at least 32 points")
        if np.any(np.diff(pts) <= 0):
            raise ModelError("grid points must be strictly increasing")
        if w.shape != pts.shape or np.any(w <= 0):
            raise ModelError("grid weights must be positive, one per point")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_points(cls, points) -> "Grid":
        pts = np.asarray(points, dtype=float)
        dx = np.diff(pts)
        w = np.zeros_like(pts)
        w[:-1] += dx / 2
        w[1:] += dx / 2
        return cls(pts, w)

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int = 501) -> "Grid":
        return cls.from_points(np.linspace(lo, hi, n))

    @classmethod
    def covering(cls, data_min: float, data_max: float, iqr: float, n: int = 501,
                 pad_iqr: float = 2.0) -> "Grid":
        """Equally spaced grid over ``[min - pad*IQR, max + pad*IQR]``."""
        pad = pad_iqr * iqr
        if pad <= 0:
            pad = max(1.0, abs(data_max - data_min))
        return cls.uniform(data_min - pad, data_max + pad, n)

    @property
    def lo(self) -> float:
        return float(self.points[0])

    @property
    def hi(self) -> float:
        return float(self.points[-1])

    def __len__(self) -> int:
        return self.points.size

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def spec(self) -> dict:
        """JSON description; only meaningful for equally spaced grids."""
        return {"lo": self.lo, "hi": self.hi, "n": len(self)}


@dataclass(frozen=True)
class EquilibriumParams:
    """Free parameters ``T, mu, rho, gamma`` (plus ``mu2`` for three actions).

    ``xi`` is the observed mean outcome; it is carried along, never fitted.
    """

    T: float
    mu: float
    rho: float
    gamma: float
    xi: float = 0.0
    mu2: Optional[float] = None

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ModelError(f"temperature must be positive and finite, got {self.T}")

    def to_dict(self) -> dict:
        d = {"T": self.T, "mu": self.mu, "rho": self.rho, "gamma": self.gamma, "xi": self.xi}
        if self.mu2 is not None:
            d["mu2"] = self.mu2
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EquilibriumParams":
        return cls(T=float(d["T"]), mu=float(d["mu"]), rho=float(d["rho"]),
                   gamma=float(d["gamma"]), xi=float(d.get("xi", 0.0)),
                   mu2=None if d.get("mu2") is None else float(d["mu2"]))

"""Prior schedules over a sequence of periods and the belief history they read from."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import ModelError, uniform_vector, validate_probability_vector

SCHEDULE_KINDS = ("uniform", "previous", "mean", "extreme", "adaptive", "fixed")
ADAPTIVE_CLIP = 1e-6


class MissingHistory(ModelError):
    pass


class AdaptiveWithoutObservations(ModelError):
    pass


@dataclass(frozen=True)
class PriorSchedule:
    """Rule producing the prior ``p_t[a]`` for each period.

    ``extreme`` puts ``weight`` on ``favored`` and splits the rest evenly.
    ``adaptive`` moves the previous prior by ``strength`` times its error
    against the observed action likelihoods ``observed[t - 1]``.
    """

    kind: str
    n_actions: int = 2
    favored: int = 0
    weight: float = 0.99
    strength: float = 0.0
    observed: Optional[tuple] = None
    vector: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ModelError(f"unknown prior schedule {self.kind!r}; choose from {SCHEDULE_KINDS}")
        if self.kind == "extreme":
            if not 0 < self.weight < 1:
                raise ModelError("extreme prior weight must lie in (0, 1)")
            if not 0 <= self.favored < self.n_actions:
                raise ModelError("favored action out of range")
        if self.kind == "adaptive" and not 0 <= self.strength <= 1:
            raise ModelError("adaptive strength must lie in [0, 1]")
        if self.kind == "fixed":
            if self.vector is None:
                raise ModelError("fixed prior needs a vector")
            validate_probability_vector(self.vector, self.n_actions)
        if self.observed is not None:
            object.__setattr__(self, "observed", tuple(tuple(map(float, o)) for o in self.observed))
        if self.vector is not None:
            object.__setattr__(self, "vector", tuple(map(float, self.vector)))

    @classmethod
    def extreme(cls, favored: int, n_actions: int = 2, weight: float = 0.99) -> "PriorSchedule":
        return cls("extreme", n_actions=n_actions, favored=favored, weight=weight)

    @classmethod
    def fixed(cls, vector: Sequence[float]) -> "PriorSchedule":
        return cls("fixed", n_actions=len(vector), vector=tuple(vector))

    @property
    def sequential(self) -> bool:
        """Whether period ``t`` depends on fits from earlier periods."""
        return self.kind in ("previous", "mean", "adaptive")


@dataclass(frozen=True, eq=False)
class BeliefRecord:
    period: str
    prior: np.ndarray
    marginal: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"period": self.period, "prior": self.prior.tolist(),
                           "marginal": self.marginal.tolist()})

    def __eq__(self, other):
        return (isinstance(other, BeliefRecord) and self.period == other.period
                and np.array_equal(self.prior, other.prior)
                and np.array_equal(self.marginal, other.marginal))


@dataclass(frozen=True)
class BeliefHistory:
    """Append-only sequence of ``(prior used, fitted action marginal)`` per period."""

    records: tuple = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, t: int) -> BeliefRecord:
        return self.records[t]

    def __iter__(self):
        return iter(self.records)

    def marginals(self) -> np.ndarray:
        return np.array([r.marginal for r in self.records])

    def dumps(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "BeliefHistory":
        history = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            history = append_period(history, rec["prior"], rec["marginal"], rec["period"])
        return history

    @classmethod
    def load(cls, path) -> "BeliefHistory":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def append_period(history: BeliefHistory, prior, fitted_marginal,
                  period: Optional[str] = None) -> BeliefHistory:
    """Return a new history with one more record (the input is left untouched).

    The fitted marginal is validated at the quadrature tolerance because it
    comes out of a numerical integral; it is stored unchanged.
    """
    p = validate_probability_vector(prior)
    f = validate_probability_vector(fitted_marginal, p.size, tol=1e-8)
    if history.records and history.records[0].prior.size != p.size:
        raise ModelError("history records must all have the same number of actions")
    label = str(len(history)) if period is None else str(period)
    return BeliefHistory(history.records + (BeliefRecord(label, p, f),))


def _as_prior(values) -> np.ndarray:
    p = np.array(values, dtype=float)
    p.setflags(write=False)
    return p


def prior_for_period(schedule: PriorSchedule, history: BeliefHistory, t: int) -> np.ndarray:
    """Prior to use in period ``t`` given fits for periods ``0 .. t-1``."""
    n = schedule.n_actions
    kind = schedule.kind
    if kind == "uniform":
        return uniform_vector(n)
    if kind == "extreme":
        p = np.full(n, (1.0 - schedule.weight) / (n - 1))
        p[schedule.favored] = schedule.weight
        return _as_prior(p)
    if kind == "fixed":
        return validate_probability_vector(schedule.vector, n)

    if len(history) < t:
        raise MissingHistory(f"period {t} needs {t} earlier records, history has {len(history)}")
    if t == 0:
        return uniform_vector(n)
    if kind == "previous":
        return history[t - 1].marginal
    if kind == "mean":
        return _as_prior(history.marginals()[:t].sum(axis=0) / t)
    # adaptive
    if schedule.observed is None or len(schedule.observed) < t:
        raise AdaptiveWithoutObservations(f"adaptive prior at period {t} needs observed likelihoods for period {t - 1}")
    prev = history[t - 1].prior
    observed = np.asarray(schedule.observed[t - 1], dtype=float)
    p = prev + schedule.strength * (prev - observed)
    p = np.clip(p, ADAPTIVE_CLIP, 1 - ADAPTIVE_CLIP)
    return _as_prior(p / p.sum())


def schedule_from_name(name: str, labels: Sequence[str], weight: float = 0.99,
                       strength: float = 0.0, observed: Optional[Iterable] = None,
                       vector: Optional[Sequence[float]] = None) -> PriorSchedule:
    """Build a schedule from a command-line name such as ``extreme-sell``."""
    n = len(labels)
    if name.startswith("extreme-"):
        action = name[len("extreme-"):]
        if action not in labels:
            raise ModelError(f"unknown action {action!r} in prior {name!r}")
        return PriorSchedule.extreme(list(labels).index(action), n, weight)
    if name == "adaptive":
        return PriorSchedule("adaptive", n_actions=n, strength=strength,
                             observed=None if observed is None else tuple(observed))
    if name == "fixed":
        if vector is None:
            raise ModelError("the fixed prior needs an explicit vector")
        return PriorSchedule("fixed", n_actions=n, vector=tuple(vector))
    return PriorSchedule(name, n_actions=n)

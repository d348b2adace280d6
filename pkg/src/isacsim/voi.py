"""Value of exogenous information: KL-divergence estimates and augmented-state assembly.

A candidate source v' is valuable to CAV v when conditioning on v's copy of the
source state predicts the predecessor's next action better than v's own state does.
The value is the expected log2 likelihood ratio of those two conditional models.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

LONG = "L"
SHORT = "S"

# per-source fields carried on each timescale
LONG_FIELDS = ("u", "alpha")
SHORT_FIELDS = ("spacing_error", "velocity_error", "speed", "accel", "heading", "position")


@dataclass
class VoIRecord:
    source: int
    timescale: str
    kl: float
    samples: int
    mc_variance: float
    selected: bool = False

    @property
    def sigma(self) -> float:
        return math.sqrt(self.mc_variance)


class DensityError(ValueError):
    pass


def _log2_density(model, a, s) -> np.ndarray:
    if hasattr(model, "logpdf"):
        return np.asarray(model.logpdf(a, s), dtype=float) / math.log(2)
    dens = np.asarray(model(a, s), dtype=float)
    bad = ~(dens > 0) | ~np.isfinite(dens)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DensityError(f"density {dens[i]!r} at sample {i}")
    return np.log2(dens)


def kl_mc_estimate(sampler: Callable, numerator, denominator, n_samples: int,
                   rng: np.random.Generator, source: int = -1,
                   timescale: str = LONG) -> VoIRecord:
    """Monte-Carlo estimate of E[log2 p_num(a|s_num) / p_den(a|s_den)] over the joint.

    ``sampler(rng, n)`` returns ``(a, s_num, s_den)`` drawn i.i.d. from the joint;
    models are callables returning densities, or objects with ``logpdf``.
    The reported variance is the sample variance of the log-ratio divided by n.
    """
    if n_samples < 100:
        raise ValueError("need at least 100 Monte-Carlo samples")
    a, s_num, s_den = sampler(rng, n_samples)
    log_ratio = _log2_density(numerator, a, s_num) - _log2_density(denominator, a, s_den)
    if not np.all(np.isfinite(log_ratio)):
        i = int(np.flatnonzero(~np.isfinite(log_ratio))[0])
        raise DensityError(f"non-finite log-density ratio at sample {i}")
    return VoIRecord(source=source, timescale=timescale, kl=float(log_ratio.mean()),
                     samples=n_samples,
                     mc_variance=float(log_ratio.var(ddof=1) / n_samples))


def kl_discrete_exact(joint: np.ndarray, numerator: np.ndarray, denominator: np.ndarray) -> float:
    """Exact sum over a, i, j of joint[a, i, j] * log2(num[i, a] / den[j, a]).

    ``joint`` has shape (A, S_num, S_den); conditional tables have one row per
    conditioning value and one column per action.
    """
    joint = np.asarray(joint, dtype=float)
    numerator = np.asarray(numerator, dtype=float)
    denominator = np.asarray(denominator, dtype=float)
    if abs(joint.sum() - 1.0) > 1e-9:
        raise ValueError("joint table does not sum to 1")
    for name, table in (("numerator", numerator), ("denominator", denominator)):
        if np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError(f"{name} rows do not sum to 1")
    total = 0.0
    A, S1, S2 = joint.shape
    for a in range(A):
        for i in range(S1):
            for j in range(S2):
                p = joint[a, i, j]
                if p > 0:
                    total += p * math.log2(numerator[i, a] / denominator[j, a])
    return total


def select_high_value(records: Iterable[VoIRecord], threshold: float) -> list[int]:
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    return sorted(r.source for r in records if r.kl >= threshold)


def augment_state(local: Sequence[float], selected: Mapping[int, Sequence[float]],
                  n_fields: int, n_slots: Optional[int] = None) -> np.ndarray:
    """Local features followed by one block per slot: source fields then a presence flag.

    Sources fill slots in ascending id order; unused slots are zeros with flag 0.
    With no slots the result is the local vector unchanged.
    """
    local = np.asarray(local, dtype=float)
    if n_slots is None:
        n_slots = len(selected)
    if len(selected) > n_slots:
        raise ValueError(f"{len(selected)} sources for {n_slots} slots")
    blocks = [local]
    for sid in sorted(selected):
        vals = np.asarray(selected[sid], dtype=float)
        if vals.shape != (n_fields,):
            raise ValueError(f"source {sid} has {vals.size} fields, schema expects {n_fields}")
        blocks.append(vals)
        blocks.append(np.ones(1))
    for _ in range(n_slots - len(selected)):
        blocks.append(np.zeros(n_fields + 1))
    return np.concatenate(blocks)


class GaussianConditional:
    """a | s ~ N(W s + b, diag(var)), fitted by least squares."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, var: np.ndarray):
        self.weights = weights
        self.bias = bias
        self.var = var

    @classmethod
    def fit(cls, s: np.ndarray, a: np.ndarray, var_floor: float = 1e-6) -> "GaussianConditional":
        s = np.atleast_2d(np.asarray(s, dtype=float))
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        X = np.hstack([s, np.ones((s.shape[0], 1))])
        coef, *_ = np.linalg.lstsq(X, a, rcond=None)
        resid = a - X @ coef
        var = np.maximum(resid.var(axis=0), var_floor)
        return cls(coef[:-1].T, coef[-1], var)

    def mean(self, s: np.ndarray) -> np.ndarray:
        return np.atleast_2d(s) @ self.weights.T + self.bias

    def logpdf(self, a: np.ndarray, s: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        z = (a - self.mean(s)) ** 2 / self.var
        return -0.5 * np.sum(z + np.log(2 * np.pi * self.var), axis=1)

    def __call__(self, a, s):
        return np.exp(self.logpdf(a, s))


def fit_conditional_models(targets: np.ndarray, source_states: np.ndarray,
                           own_states: np.ndarray, min_samples: int = 100,
                           var_floor: float = 1e-6):
    """Fit p(a | s_source) and p(a | s_own) on a logged trajectory."""
    targets = np.asarray(targets, dtype=float)
    if len(targets) < min_samples:
        raise ValueError(f"log has {len(targets)} transitions, need {min_samples}")
    num = GaussianConditional.fit(source_states, targets, var_floor)
    den = GaussianConditional.fit(own_states, targets, var_floor)
    return num, den


def log_sampler(targets, source_states, own_states) -> Callable:
    """Bootstrap sampler over logged (a, s_source, s_own) triples."""
    targets = np.asarray(targets, dtype=float)
    source_states = np.asarray(source_states, dtype=float)
    own_states = np.asarray(own_states, dtype=float)

    def draw(rng, n):
        idx = rng.integers(0, len(targets), size=n)
        return targets[idx], source_states[idx], own_states[idx]

    return draw


class TrajectoryLog:
    """Rolling per-(vehicle, timescale) log of (own state, candidate states, next predecessor action)."""

    def __init__(self, maxlen: int = 2000):
        self.maxlen = maxlen
        self._rows: dict[tuple[int, str], deque] = {}
        self._pending: dict[tuple[int, str], tuple] = {}

    def observe(self, vid: int, timescale: str, own: np.ndarray,
                candidates: Mapping[int, np.ndarray]) -> None:
        self._pending[(vid, timescale)] = (np.asarray(own, dtype=float),
                                           {k: np.asarray(v, dtype=float) for k, v in candidates.items()})

    def resolve(self, vid: int, timescale: str, predecessor_action: np.ndarray) -> None:
        """Attach the predecessor's next action to the pending observation."""
        key = (vid, timescale)
        if key not in self._pending:
            return
        own, cands = self._pending.pop(key)
        rows = self._rows.setdefault(key, deque(maxlen=self.maxlen))
        rows.append((own, cands, np.atleast_1d(np.asarray(predecessor_action, dtype=float))))

    def drop_pending(self) -> None:
        self._pending.clear()

    def size(self, vid: int, timescale: str) -> int:
        return len(self._rows.get((vid, timescale), ()))

    def arrays(self, vid: int, timescale: str, source: int):
        rows = [r for r in self._rows.get((vid, timescale), ()) if source in r[1]]
        if not rows:
            return None
        own = np.stack([r[0] for r in rows])
        src = np.stack([r[1][source] for r in rows])
        tgt = np.stack([r[2] for r in rows])
        return tgt, src, own

    def keys(self):
        return sorted(self._rows)


def estimate_values(log: TrajectoryLog, vid: int, timescale: str, sources: Sequence[int],
                    n_samples: int, rng: np.random.Generator,
                    min_samples: int = 100) -> list[VoIRecord]:
    """One record per candidate source with enough logged data."""
    out = []
    for src in sorted(sources):
        data = log.arrays(vid, timescale, src)
        if data is None or len(data[0]) < min_samples:
            continue
        tgt, s_src, s_own = data
        num, den = fit_conditional_models(tgt, s_src, s_own, min_samples)
        out.append(kl_mc_estimate(log_sampler(tgt, s_src, s_own), num, den,
                                  n_samples, rng, source=src, timescale=timescale))
    return out

"""Per-agent reward shaping for driving (TTC) and sensing (CRB) agents."""

from __future__ import annotations

import numpy as np

TTC_CAP = 20.0


def capped_ttc(ttc, cap: float = TTC_CAP) -> np.ndarray:
    return np.minimum(np.asarray(ttc, dtype=float), cap)


def reward_cav(ttc_trace, cap: float = TTC_CAP) -> float:
    """Average over short slots of the summed capped TTC.

    ``ttc_trace`` is either one TTC per slot or a (slots, pairs) array.
    Infinite TTC (non-closing pair) counts as ``cap``.
    """
    trace = np.asarray(ttc_trace, dtype=float)
    if trace.size == 0:
        raise ValueError("empty TTC trace")
    if np.any(np.isnan(trace)):
        raise ValueError("TTC trace contains NaN")
    if trace.ndim == 1:
        trace = trace[:, None]
    return float(capped_ttc(trace, cap).sum(axis=1).mean())


def reward_rsu(crb_theta, crb_d, ref_theta=1.0, ref_d=1.0) -> float:
    """Negated mean CRB sum; each bound may be normalised by a reference value.

    Normalising keeps the angle (rad^2) and range (m^2) terms on a comparable scale.
    """
    th, dd = _ratio(crb_theta, ref_theta), _ratio(crb_d, ref_d)
    if th.size == 0 or dd.size == 0:
        raise ValueError("no CRB values")
    return -float(np.mean(th + dd))


def _ratio(value, ref) -> np.ndarray:
    """value / ref with 0/0 read as 0 (a noise-free bound matches a noise-free reference)."""
    value = np.asarray(value, dtype=float)
    ref = np.broadcast_to(np.asarray(ref, dtype=float), value.shape)
    out = np.full(value.shape, np.inf)
    nz = ref != 0
    out[nz] = value[nz] / ref[nz]
    out[~nz & (value == 0)] = 0.0
    return out

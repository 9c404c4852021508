"""Lobe transitions, sojourn-time distributions and exponential tails.

The attractor has two lobes separated by y3 = 0.  A lobe visit is armed by
a local maximum above y_b (right lobe) or a local minimum below -y_b
(left lobe); a transition happens only when a qualifying maximum is
immediately followed by a qualifying minimum or vice versa, and its
instant is the first sample at which the series crosses zero in between.
Sojourn durations are the gaps between consecutive transition instants;
the censored stretches before the first and after the last transition are
excluded.

Local extrema are taken on the sampled series with strict neighbor
comparison; plateaus count once, at their first sample.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError
from .integrate import Trajectory

LEFT, RIGHT = "left", "right"


@dataclass
class LobeSpec:
    """Arming thresholds and the y-component the lobes live in.

    ``y_b`` is the upper threshold; the lower one is its negative.
    ``component`` indexes within the y-block (2 = y3, the default).  The
    stock 0.2 suits the mixed slow/fast regime; the slow regime's smaller
    lobes need a proportionally smaller threshold (its y3 stays within
    about +/-0.12).
    """

    y_b: float = 0.2
    component: int = 2

    def __post_init__(self):
        if self.y_b <= 0.0:
            raise ValueError("y_b must be positive")
        if self.component not in (0, 1, 2):
            raise ValueError("component indexes the y-block (0..2)")

    @property
    def y_a(self) -> float:
        return -self.y_b


@dataclass
class SojournRecord:
    """One uninterrupted stay in a lobe."""

    lobe: str
    t_enter: float
    t_exit: float

    @property
    def duration(self) -> float:
        return self.t_exit - self.t_enter


@dataclass
class ExpFit:
    """Least-squares exponential a*exp(b*t) through histogram counts."""

    a: float
    b: float
    fit_t_min: float
    fit_t_max: float
    r2: float
    n_bins: int


def lobe_series(traj: Trajectory, spec: LobeSpec) -> np.ndarray:
    """Extract the monitored y-component from a 3/6/9-component trajectory."""
    return traj.y_block()[:, spec.component]


def _run_extrema(s: np.ndarray):
    """Interior local extrema with plateaus collapsed to their first sample.

    Returns (indices, kinds) with kind +1 for maxima, -1 for minima,
    ordered by index.  Boundary runs never qualify.
    """
    changes = np.nonzero(np.diff(s) != 0.0)[0]
    starts = np.concatenate([[0], changes + 1])
    vals = s[starts]
    if vals.size < 3:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    prev, cur, nxt = vals[:-2], vals[1:-1], vals[2:]
    is_max = (cur > prev) & (cur > nxt)
    is_min = (cur < prev) & (cur < nxt)
    keep = is_max | is_min
    idx = starts[1:-1][keep]
    kind = np.where(is_max[keep], 1, -1).astype(np.int64)
    return idx, kind


def detect_transitions(series, dt: float, spec: LobeSpec, t0: float = 0.0):
    """Transition instants and sojourn records of a y-component series.

    Returns (transition_times, records).  Fewer than two qualifying
    extrema of alternating type yield empty results, not an error.
    """
    s = np.asarray(series, dtype=float)
    if s.ndim != 1:
        raise ValueError("series must be 1-D")
    if not np.all(np.isfinite(s)):
        raise ValueError("series must be finite")
    idx, kind = _run_extrema(s)
    qual = ((kind == 1) & (s[idx] > spec.y_b)) \
        | ((kind == -1) & (s[idx] < spec.y_a))
    idx, kind = idx[qual], kind[qual]

    trans_idx = []
    entered = []
    prev_i, prev_k = -1, 0
    for i, k in zip(idx, kind):
        if prev_k != 0 and k != prev_k:
            seg = s[prev_i:i + 1]
            if k == -1:  # armed maximum followed by armed minimum
                off = int(np.argmax(seg < 0.0))
                entered.append(LEFT)
            else:
                off = int(np.argmax(seg > 0.0))
                entered.append(RIGHT)
            trans_idx.append(prev_i + off)
        prev_i, prev_k = i, k

    times = t0 + dt * np.asarray(trans_idx, dtype=float)
    records = [SojournRecord(entered[r], times[r], times[r + 1])
               for r in range(len(times) - 1)]
    return times, records


def durations_of(records) -> np.ndarray:
    return np.array([r.duration for r in records], dtype=float)


def sojourn_histogram(records, bin_width_days: float = 5.0):
    """Pooled-lobe duration histogram from 0 in fixed-width bins.

    Returns (bin centers, integer counts); the counts sum to the number of
    records.
    """
    if bin_width_days <= 0.0:
        raise ValueError("bin width must be positive")
    dur = records if isinstance(records, np.ndarray) else durations_of(records)
    if dur.size < 1:
        raise InsufficientDataError("no sojourn records")
    n_bins = max(1, int(np.ceil(dur.max() / bin_width_days + 1e-12)))
    counts, edges = np.histogram(dur, bins=n_bins,
                                 range=(0.0, n_bins * bin_width_days))
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, counts


def fit_exponential(hist, min_count: int = 5, t_min: float = 0.0) -> ExpFit:
    """Least squares of log(counts) against bin centers.

    Only bins with ``count >= min_count`` and ``center >= t_min`` enter the
    fit (sparse tail bins destabilize the log; the short-sojourn bulk is
    not exponential).  Needs at least 3 such bins.
    """
    centers, counts = hist
    centers = np.asarray(centers, dtype=float)
    counts = np.asarray(counts, dtype=float)
    keep = (counts >= min_count) & (centers >= t_min)
    if np.count_nonzero(keep) < 3:
        raise InsufficientDataError(
            "need at least 3 bins with enough counts for the tail fit")
    t = centers[keep]
    logc = np.log(counts[keep])
    slope, intercept = np.polyfit(t, logc, 1)
    resid = logc - (slope * t + intercept)
    ss_tot = float(np.sum((logc - logc.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return ExpFit(a=float(np.exp(intercept)), b=float(slope),
                  fit_t_min=float(t.min()), fit_t_max=float(t.max()),
                  r2=r2, n_bins=int(t.size))


def max_sojourn(records) -> float:
    """Longest recorded stay (days); the rare-event headline number."""
    dur = durations_of(records)
    if dur.size < 1:
        raise InsufficientDataError("no sojourn records")
    return float(dur.max())


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def write_records_csv(path, records):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write("lobe,t_enter,t_exit,duration\n")
        for r in records:
            fh.write(f"{r.lobe},{r.t_enter:.10g},{r.t_exit:.10g},"
                     f"{r.duration:.10g}\n")
    os.replace(tmp, path)


def write_histogram_csv(path, hist, fit: ExpFit = None):
    centers, counts = hist
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write("bin_center_days,count\n")
        for t, c in zip(centers, counts):
            fh.write(f"{t:.10g},{int(c)}\n")
        if fit is not None:
            fh.write(f"# fit a*exp(b*t): a={fit.a:.10g} b={fit.b:.10g} "
                     f"r2={fit.r2:.6f} over [{fit.fit_t_min:g},"
                     f"{fit.fit_t_max:g}] days\n")
    os.replace(tmp, path)


def summary_text(records, fit: ExpFit = None) -> str:
    lines = [f"transitions: {len(records) + 1 if records else 0}",
             f"sojourns: {len(records)}"]
    if records:
        dur = durations_of(records)
        lines += [f"mean sojourn (days): {dur.mean():.4g}",
                  f"max sojourn (days): {dur.max():.4g}"]
    if fit is not None:
        lines += [f"exponential fit a: {fit.a:.6g}",
                  f"exponential fit b (per day): {fit.b:.6g}",
                  f"fit r2: {fit.r2:.4f}"]
    return "\n".join(lines) + "\n"

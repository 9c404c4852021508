"""Slow/fast decomposition: boxcar low-pass, periodograms, wave-period scan.

The slow motion is extracted with a centered moving average whose window
equals the dominant gravity-wave period.  Edges are trimmed, not padded,
so filtered targets never contain synthetic slow content; the window
sample count is forced odd to keep the filter phase-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, NoGravityWavePeakError
from .integrate import Trajectory

#: stock gravity-wave period (days) of the mixed regime; use
#: :func:`estimate_t_gw` to recompute for other parameter sets.
DEFAULT_T_GW_DAYS = 0.25


@dataclass
class FilterSpec:
    """Centered moving-average specification.

    ``window_days`` is the averaging span; it defaults to the gravity-wave
    period carried in ``t_gw_days``.  The sample count is rounded to the
    nearest odd integer at apply time.
    """

    window_days: float
    t_gw_days: float = DEFAULT_T_GW_DAYS
    alignment: str = "centered"

    def __post_init__(self):
        if self.window_days <= 0.0:
            raise ValueError("window_days must be positive")
        if self.alignment != "centered":
            raise ValueError("only centered alignment is supported")

    @classmethod
    def from_t_gw(cls, t_gw_days: float = DEFAULT_T_GW_DAYS) -> "FilterSpec":
        return cls(window_days=t_gw_days, t_gw_days=t_gw_days)

    def window_samples(self, dt: float) -> int:
        """Window length in samples, forced to the nearest odd integer >= 1."""
        w = self.window_days / dt
        odd = 2 * int(round((w - 1.0) / 2.0)) + 1
        return max(odd, 1)


def moving_average(traj: Trajectory, spec: FilterSpec) -> Trajectory:
    """Centered boxcar average per component, trimmed to full coverage.

    The output keeps only the n - w + 1 samples whose window lies entirely
    inside the input; t0 shifts by (w-1)/2 samples accordingly.
    """
    w = spec.window_samples(traj.dt)
    if w > traj.n:
        raise InsufficientDataError(
            f"window of {w} samples exceeds trajectory length {traj.n}")
    kernel = np.ones(w)
    out = np.empty((traj.n - w + 1, traj.n_components))
    for c in range(traj.n_components):
        out[:, c] = np.convolve(traj.data[:, c], kernel, mode="valid") / w
    t0 = traj.t0 + 0.5 * (w - 1) * traj.dt
    return Trajectory(t0, traj.dt, out)


def filter_offsets(traj: Trajectory, spec: FilterSpec) -> tuple[int, int]:
    """Index range [lo, hi) of input samples that survive the trimming."""
    w = spec.window_samples(traj.dt)
    half = (w - 1) // 2
    return half, traj.n - half


def power_spectrum(series, dt: float, taper: str = "boxcar"):
    """Mean-removed periodogram of a uniformly sampled series.

    Returns (frequencies in cycles/day, one-sided power).  Normalization is
    Parseval-consistent: the powers sum to the (tapered) biased variance of
    the series.  ``taper`` is "boxcar" (none; the default, so a sinusoid at
    a bin frequency lands in a single bin) or "hann".
    """
    u = np.asarray(series, dtype=float)
    if u.ndim != 1:
        raise ValueError("series must be 1-D")
    n = u.size
    if n < 16:
        raise InsufficientDataError("need at least 16 samples for a spectrum")
    u = u - u.mean()
    if taper == "boxcar":
        win = np.ones(n)
    elif taper == "hann":
        win = np.hanning(n)
    else:
        raise ValueError(f"unknown taper {taper!r}")
    spec = np.fft.rfft(u * win)
    power = (spec.real**2 + spec.imag**2) / (n * np.sum(win**2))
    power[0] = 0.0  # the mean is removed; any DC residue is roundoff
    power[1:] *= 2.0
    if n % 2 == 0:
        power[-1] /= 2.0  # Nyquist bin is not doubled
    freqs = np.fft.rfftfreq(n, d=dt)
    return freqs, power


def band_power(freqs, power, f_lo: float, f_hi: float) -> float:
    """Total power in the inclusive frequency band [f_lo, f_hi] (cycles/day)."""
    if f_hi <= f_lo:
        raise ValueError("empty band")
    m = (freqs >= f_lo) & (freqs <= f_hi)
    return float(np.sum(power[m]))


def estimate_t_gw(traj: Trajectory, max_period_days: float = 1.0,
                  min_band_fraction: float = 1e-3,
                  prominence: float = 10.0) -> float:
    """Dominant sub-daily spectral period (days) of the divergent components.

    Scans the pooled periodogram of the x-components (all components for
    non-9-component trajectories) over periods below ``max_period_days``.
    The winning bin must hold at least ``prominence`` times the local
    background power and the whole band at least ``min_band_fraction`` of
    the total variance, otherwise :class:`NoGravityWavePeakError` is raised
    (the slow regime has no such peak).
    """
    span = traj.span_days
    if span < 100.0 * max_period_days:
        raise InsufficientDataError(
            f"need >= {100 * max_period_days:g} days of data, have {span:g}")
    if traj.dt > max_period_days / 4.0:
        raise InsufficientDataError("sampling too coarse for the search band")
    comps = traj.x_block() if traj.n_components == 9 else traj.data
    freqs = None
    total = None
    for c in range(comps.shape[1]):
        f, p = power_spectrum(comps[:, c], traj.dt)
        freqs, total = f, (p if total is None else total + p)

    f_lo = 1.0 / max_period_days
    band = np.nonzero((freqs > f_lo) & (freqs <= 0.9 * freqs[-1]))[0]
    if band.size < 16:
        raise InsufficientDataError("search band too narrow")
    variance = float(np.sum(total[1:]))
    band_frac = float(np.sum(total[band])) / variance
    # interior maximum: a peak pinned to the band edge is leakage, not a wave
    inner = band[1:-1]
    ipk = inner[int(np.argmax(total[inner]))]
    neighborhood = band[(np.abs(band - ipk) >= 4)
                        & (np.abs(freqs[band] - freqs[ipk])
                           <= 0.5 * freqs[ipk])]
    background = float(np.median(total[neighborhood])) \
        if neighborhood.size else 0.0
    peaked = background > 0.0 and total[ipk] >= prominence * background
    if band_frac < min_band_fraction or not peaked:
        raise NoGravityWavePeakError()
    return float(1.0 / freqs[ipk])

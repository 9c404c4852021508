"""Offline closure quality measures.

* high-frequency residual: unfiltered truth x minus the parameterized x
  along the trajectory (near-zero mean means the slow motion is captured),
* spectral deficit: closure-to-truth band-power ratio per y-component,
  default band around the gravity-wave frequency,
* sphere level sets: a parameterization component sampled on an
  equal-area spherical grid in y-space, for geometric inspection,
* Poincare sections and Hausdorff distances between them, to compare the
  attractor geometry of closure runs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .integrate import Trajectory
from .mlp import Parameterization
from .spectral import band_power, power_spectrum

#: default comparison band (cycles/day): periods 0.1 to 0.5 day, bracketing
#: the quarter-day gravity waves
GRAVITY_WAVE_BAND = (2.0, 10.0)


def hf_residual(traj: Trajectory, p: Parameterization):
    """Residual series x_j(t) - xhat_j(y(t)) on unfiltered data, plus means.

    Returns (residuals (n, 3), means (3,)).  Needs the full 9-component
    trajectory so both the true x and the driving y are unfiltered.
    """
    if traj.n_components != 9:
        raise ValueError("need a 9-component trajectory with x and y blocks")
    xhat = np.atleast_2d(p.x_estimate(traj.y_block()))
    resid = traj.x_block() - xhat
    return resid, resid.mean(axis=0)


def spectral_deficit(truth: Trajectory, closure: Trajectory,
                     band=GRAVITY_WAVE_BAND) -> np.ndarray:
    """Closure/truth band-power ratio per y-component.

    Powers are Parseval-normalized, so each ratio compares the variance the
    two series carry in the band regardless of run lengths.  Sampling
    intervals must match and the band must lie inside the Nyquist range.
    """
    if abs(truth.dt - closure.dt) > 1e-12 * max(truth.dt, closure.dt):
        raise ValueError("sampling intervals must match")
    f_lo, f_hi = band
    nyquist = 0.5 / truth.dt
    if not 0.0 <= f_lo < f_hi <= nyquist:
        raise ValueError(f"band {band} outside the Nyquist range "
                         f"(0, {nyquist:g}]")
    yt = truth.y_block()
    yc = closure.y_block()
    ratios = np.empty(3)
    for j in range(3):
        ft, pt = power_spectrum(yt[:, j], truth.dt)
        fc, pc = power_spectrum(yc[:, j], closure.dt)
        denom = band_power(ft, pt, f_lo, f_hi)
        if denom <= 0.0:
            raise ValueError(f"truth component {j} has no power in the band")
        ratios[j] = band_power(fc, pc, f_lo, f_hi) / denom
    return ratios


# ---------------------------------------------------------------------------
# geometric visualization
# ---------------------------------------------------------------------------

@dataclass
class SphereGrid:
    """Equal-area sample of the sphere |y| = r in rotational-flow space."""

    r: float
    resolution: int
    points: np.ndarray

    @classmethod
    def make(cls, r: float, resolution: int = 200) -> "SphereGrid":
        """Equal-area latitude bands x uniform azimuths; r = 0 degenerates
        to the single point at the origin."""
        if r < 0.0:
            raise ValueError("radius must be nonnegative")
        if r == 0.0:
            return cls(0.0, 1, np.zeros((1, 3)))
        if resolution < 1:
            raise ValueError("resolution must be >= 1")
        zs = r * (-1.0 + (2.0 * np.arange(resolution) + 1.0) / resolution)
        phis = 2.0 * np.pi * (np.arange(resolution) + 0.5) / resolution
        z = np.repeat(zs, resolution)
        phi = np.tile(phis, resolution)
        rho = np.sqrt(np.maximum(r**2 - z**2, 0.0))
        pts = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
        return cls(r, resolution, pts)


def sphere_level_set(p: Parameterization, component: int,
                     grid: SphereGrid, which: str = "x") -> np.ndarray:
    """Evaluate one output component on the grid.

    Returns rows (y1, y2, sign(y3), value); the sign column separates the
    two hemispheres, since (y1, y2) alone is two-valued on the sphere.
    ``which`` selects the x-estimate (default) or the z-estimate.
    """
    if component not in (0, 1, 2):
        raise ValueError("component must be 0, 1 or 2")
    if which == "x":
        vals = np.atleast_2d(p.x_estimate(grid.points))[:, component]
    elif which == "z":
        z = p.z_estimate(grid.points)
        if z is None:
            raise ValueError(f"{p.kind} parameterization has no z-estimate")
        vals = np.atleast_2d(z)[:, component]
    else:
        raise ValueError("which must be 'x' or 'z'")
    return np.column_stack([grid.points[:, 0], grid.points[:, 1],
                            np.sign(grid.points[:, 2]), vals])


def attractor_rms_radius(traj: Trajectory) -> float:
    """RMS of |y| over the trajectory: the stock level-set sphere radius."""
    y = traj.y_block()
    return float(np.sqrt(np.mean(np.sum(y**2, axis=1))))


# ---------------------------------------------------------------------------
# attractor-geometry comparison
# ---------------------------------------------------------------------------

def poincare_points(traj: Trajectory, plane_value: float = None,
                    transient_days: float = 0.0) -> np.ndarray:
    """(y2, y3) at upward crossings of y1 through a section plane.

    ``plane_value`` defaults to the run's own time-mean y1; crossings are
    linearly interpolated.  Samples before ``transient_days`` are dropped.
    """
    y = traj.y_block()
    if transient_days > 0.0:
        keep = traj.times() >= traj.t0 + transient_days
        y = y[keep]
    if y.shape[0] < 3:
        return np.empty((0, 2))
    y1 = y[:, 0]
    if plane_value is None:
        plane_value = float(y1.mean())
    u = y1 - plane_value
    up = np.nonzero((u[:-1] < 0.0) & (u[1:] >= 0.0))[0]
    if up.size == 0:
        return np.empty((0, 2))
    frac = -u[up] / (u[up + 1] - u[up])
    pts = y[up, 1:] + frac[:, None] * (y[up + 1, 1:] - y[up, 1:])
    return pts


def hausdorff_distance(A: np.ndarray, B: np.ndarray,
                       chunk: int = 2048) -> float:
    """Symmetric Hausdorff distance between two planar point sets."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("point sets must be nonempty")

    def directed(P, Q):
        worst = 0.0
        for lo in range(0, P.shape[0], chunk):
            blk = P[lo:lo + chunk]
            d2 = ((blk[:, None, :] - Q[None, :, :]) ** 2).sum(axis=2)
            worst = max(worst, float(np.sqrt(d2.min(axis=1).max())))
        return worst

    return max(directed(A, B), directed(B, A))


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def write_surface_csv(path, rows: np.ndarray):
    tmp = f"{path}.tmp.{os.getpid()}"
    np.savetxt(tmp, rows, delimiter=",", comments="",
               header="y1,y2,hemisphere,value", fmt="%.10g")
    os.replace(tmp, path)


def write_residual_csv(path, times: np.ndarray, resid: np.ndarray):
    tmp = f"{path}.tmp.{os.getpid()}"
    np.savetxt(tmp, np.column_stack([times, resid]), delimiter=",",
               comments="", header="t,E1,E2,E3", fmt="%.10g")
    os.replace(tmp, path)

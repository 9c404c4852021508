"""Fixed-step RK4 integration and the Trajectory container.

All time bookkeeping is in days.  ``integrate`` drives an arbitrary tendency
callable; the module also hosts the uniform-sampling :class:`Trajectory`
record plus its binary ("L80T") and CSV serializations.  Long production
runs of the built-in systems go through the compiled kernels in
``l80lab.kernels`` which produce identical trajectories much faster.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import BlowUpError, ConfigError

#: any |component| above this is treated as numerical divergence
BLOWUP_THRESHOLD = 1.0e6

_MAGIC = b"L80T"
_VERSION = 1


@dataclass
class Trajectory:
    """Uniformly sampled time series of state vectors.

    ``data`` has shape (n, n_components); row i is the state at
    ``t0 + i*dt`` (days).  Full-model runs carry 9 components in the flat
    state order; closure runs carry 3 (y) or 6 (y plus diagnosed x).
    """

    t0: float
    dt: float
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("data must be a nonempty (n, k) array")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("trajectory contains non-finite values")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def n_components(self) -> int:
        return self.data.shape[1]

    @property
    def span_days(self) -> float:
        return (self.n - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    def component(self, idx: int) -> np.ndarray:
        return self.data[:, idx]

    def x_block(self) -> np.ndarray:
        if self.n_components != 9:
            raise ValueError("x block requires a 9-component trajectory")
        return self.data[:, model.X]

    def y_block(self) -> np.ndarray:
        if self.n_components == 9:
            return self.data[:, model.Y]
        return self.data[:, 0:3]

    def z_block(self) -> np.ndarray:
        if self.n_components != 9:
            raise ValueError("z block requires a 9-component trajectory")
        return self.data[:, model.Z]

    def slice_days(self, start: float, stop: float) -> "Trajectory":
        """Sub-trajectory covering [start, stop] (absolute days, inclusive)."""
        i0 = max(0, int(np.ceil((start - self.t0) / self.dt - 1e-9)))
        i1 = min(self.n - 1, int(np.floor((stop - self.t0) / self.dt + 1e-9)))
        if i1 < i0:
            raise ValueError("empty time slice")
        return Trajectory(self.t0 + i0 * self.dt, self.dt,
                          self.data[i0:i1 + 1].copy())


def _check_sample(s: np.ndarray, step: int):
    if not np.all(np.isfinite(s)) or np.any(np.abs(s) > BLOWUP_THRESHOLD):
        raise BlowUpError(step)


def rk4_step(rhs, s: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta 4 step of ds/dt = rhs(s)."""
    k1 = rhs(s)
    k2 = rhs(s + 0.5 * dt * k1)
    k3 = rhs(s + 0.5 * dt * k2)
    k4 = rhs(s + dt * k3)
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(rhs, s0, dt: float, n_steps: int, stride: int = 1,
              t0: float = 0.0) -> Trajectory:
    """Fixed-step RK4 in day-time, recording every stride-th state.

    The initial state is recorded, so the output has
    ``floor(n_steps/stride) + 1`` samples at interval ``stride*dt``.
    Raises :class:`BlowUpError` (with the offending step index and the
    samples recorded so far) if the state leaves the finite range.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    s = np.array(s0, dtype=np.float64)
    n_out = n_steps // stride + 1
    out = np.empty((n_out, s.size))
    out[0] = s
    _check_sample(s, 0)
    row = 1
    for step in range(1, n_steps + 1):
        s = rk4_step(rhs, s, dt)
        if step % stride == 0:
            try:
                _check_sample(s, step)
            except BlowUpError as exc:
                exc.partial = Trajectory(t0, stride * dt, out[:row]) \
                    if row > 0 else None
                raise
            out[row] = s
            row += 1
    return Trajectory(t0, stride * dt, out[:row])


def spinup_then_record(p: model.ModelParams, s0, spinup_days: float,
                       record_days: float, stride: int = 1) -> Trajectory:
    """Integrate the full model through a discarded transient, then record.

    Uses ``p.dt_model_days`` as the step.  The recorded trajectory starts at
    t0 = 0 (the post-spinup instant).  Prefer the compiled equivalent in
    ``l80lab.kernels`` for multi-year runs.
    """
    if spinup_days < 0.0 or record_days < 0.0:
        raise ValueError("spinup_days and record_days must be >= 0")
    dt = p.dt_model_days
    rhs = model.rhs_per_day(p)
    n_spin = int(round(spinup_days / dt))
    s = np.array(s0, dtype=np.float64)
    for step in range(1, n_spin + 1):
        s = rk4_step(rhs, s, dt)
        if step % 1000 == 0 or step == n_spin:
            _check_sample(s, step)
    n_rec = int(round(record_days / dt))
    return integrate(rhs, s, dt, n_rec, stride=stride, t0=0.0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_trajectory(path, traj: Trajectory):
    """Write the binary trajectory format (atomic: temp file + rename).

    Layout, little-endian: magic "L80T", u32 version=1, u64 n, f64 t0,
    f64 dt, u8 n_components, then row-major f64 samples.
    """
    header = _MAGIC + struct.pack("<IQddB", _VERSION, traj.n,
                                  traj.t0, traj.dt, traj.n_components)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(traj.data.astype("<f8", copy=False).tobytes())
    os.replace(tmp, path)


def read_trajectory(path) -> Trajectory:
    """Read the binary trajectory format written by :func:`write_trajectory`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ConfigError(f"{path}: not a trajectory file (bad magic)")
        header = fh.read(struct.calcsize("<IQddB"))
        version, n, t0, dt, k = struct.unpack("<IQddB", header)
        if version != _VERSION:
            raise ConfigError(f"{path}: unsupported version {version}")
        raw = fh.read(n * k * 8)
    if len(raw) != n * k * 8:
        raise ConfigError(f"{path}: truncated trajectory payload")
    data = np.frombuffer(raw, dtype="<f8").reshape(n, k)
    return Trajectory(t0, dt, data.copy())


_CSV_HEADERS = {
    9: "t,x1,x2,x3,y1,y2,y3,z1,z2,z3",
    6: "t,y1,y2,y3,xhat1,xhat2,xhat3",
    3: "t,y1,y2,y3",
}


def write_trajectory_csv(path, traj: Trajectory):
    """CSV export with a time column; header follows the component layout."""
    header = _CSV_HEADERS.get(
        traj.n_components,
        "t," + ",".join(f"c{i+1}" for i in range(traj.n_components)))
    table = np.column_stack([traj.times(), traj.data])
    tmp = f"{path}.tmp.{os.getpid()}"
    np.savetxt(tmp, table, delimiter=",", header=header, comments="",
               fmt="%.17g")
    os.replace(tmp, path)

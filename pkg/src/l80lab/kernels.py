"""Compiled fast paths for long integrations.

Numba translations of the RK4 loops in ``l80lab.integrate`` for the two
systems the package integrates for years at a time: the full
nine-component model and MLP-backed closures of the y-equation.  The
Python reference paths stay the contract; unit tests pin the kernels to
them.  Networks enter the kernels as zero-padded weight stacks so one
compiled function serves every architecture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import model
from .errors import BlowUpError
from .integrate import BLOWUP_THRESHOLD, Trajectory

# cyclic triples as parallel index arrays (frozen into compiled code)
_CI = np.array([0, 1, 2], dtype=np.int64)
_CJ = np.array([1, 2, 0], dtype=np.int64)
_CK = np.array([2, 0, 1], dtype=np.int64)


@njit(cache=True)
def _l80_rhs(s, a, b, c, nu0, kappa0, g0, F, h, scale, ds):
    """Full-model tendency, scaled to day-time, written into ds."""
    for m in range(3):
        i, j, k = _CI[m], _CJ[m], _CK[m]
        x_i, x_j, x_k = s[i], s[j], s[k]
        y_i, y_j, y_k = s[3 + i], s[3 + j], s[3 + k]
        z_i = s[6 + i]
        zh_j = s[6 + j] - h[j]
        zh_k = s[6 + k] - h[k]
        dx = (-nu0 * a[i] * a[i] * x_i
              - c * (a[i] - a[k]) * x_j * y_k
              + c * (a[i] - a[j]) * y_j * x_k
              + a[i] * b[i] * x_j * x_k
              - 2.0 * c * c * y_j * y_k
              + a[i] * (y_i - z_i)) / a[i]
        dy = (-a[k] * b[k] * x_j * y_k
              - a[j] * b[j] * y_j * x_k
              + c * (a[k] - a[j]) * y_j * y_k
              - a[i] * x_i
              - nu0 * a[i] * a[i] * y_i) / a[i]
        dz = (g0 * a[i] * x_i
              - b[k] * x_j * zh_k - b[j] * zh_j * x_k
              + c * y_j * zh_k - c * zh_j * y_k
              - kappa0 * a[i] * z_i + F[i])
        ds[i] = scale * dx
        ds[3 + i] = scale * dy
        ds[6 + i] = scale * dz


@njit(cache=True)
def _state_bad(s, thresh):
    for i in range(s.shape[0]):
        v = s[i]
        if not np.isfinite(v) or abs(v) > thresh:
            return True
    return False


@njit(cache=True)
def _l80_rk4(s0, dt, n_steps, stride, a, b, c, nu0, kappa0, g0, F, h,
             scale, record, out):
    """RK4 march of the full model; returns (rows_written, blowup_step).

    blowup_step is -1 on success.  When ``record`` is False only the final
    state is stored (row 0 of out), which serves the spinup phase.
    """
    s = s0.copy()
    k1 = np.empty(9)
    k2 = np.empty(9)
    k3 = np.empty(9)
    k4 = np.empty(9)
    tmp = np.empty(9)
    row = 0
    if record:
        out[0, :] = s
        row = 1
    for step in range(1, n_steps + 1):
        _l80_rhs(s, a, b, c, nu0, kappa0, g0, F, h, scale, k1)
        for i in range(9):
            tmp[i] = s[i] + 0.5 * dt * k1[i]
        _l80_rhs(tmp, a, b, c, nu0, kappa0, g0, F, h, scale, k2)
        for i in range(9):
            tmp[i] = s[i] + 0.5 * dt * k2[i]
        _l80_rhs(tmp, a, b, c, nu0, kappa0, g0, F, h, scale, k3)
        for i in range(9):
            tmp[i] = s[i] + dt * k3[i]
        _l80_rhs(tmp, a, b, c, nu0, kappa0, g0, F, h, scale, k4)
        for i in range(9):
            s[i] = s[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i]
                                        + 2.0 * k3[i] + k4[i])
        if _state_bad(s, BLOWUP_THRESHOLD):
            return row, step
        if record and step % stride == 0:
            out[row, :] = s
            row += 1
    if not record:
        out[0, :] = s
        row = 1
    return row, -1


def _param_tuple(p: model.ModelParams):
    return (np.ascontiguousarray(p.a), np.ascontiguousarray(p.b),
            float(p.c), float(p.nu0), float(p.kappa0), float(p.g0),
            np.ascontiguousarray(p.F), np.ascontiguousarray(p.h))


def run_l80(p: model.ModelParams, s0, dt: float, n_steps: int,
            stride: int = 1, t0: float = 0.0) -> Trajectory:
    """Compiled equivalent of ``integrate(model.rhs_per_day(p), ...)``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    s0 = np.ascontiguousarray(s0, dtype=np.float64)
    out = np.empty((n_steps // stride + 1, 9))
    rows, bad = _l80_rk4(s0, float(dt), int(n_steps), int(stride),
                         *_param_tuple(p), model.TIME_UNITS_PER_DAY,
                         True, out)
    if bad >= 0:
        partial = Trajectory(t0, stride * dt, out[:rows]) if rows else None
        raise BlowUpError(bad, partial)
    return Trajectory(t0, stride * dt, out[:rows])


def spinup_state(p: model.ModelParams, s0, spinup_days: float,
                 dt: float) -> np.ndarray:
    """Integrate through a transient and return only the final state."""
    n_spin = int(round(spinup_days / dt))
    if n_spin == 0:
        return np.array(s0, dtype=np.float64)
    out = np.empty((1, 9))
    s0 = np.ascontiguousarray(s0, dtype=np.float64)
    rows, bad = _l80_rk4(s0, float(dt), n_spin, 1, *_param_tuple(p),
                         model.TIME_UNITS_PER_DAY, False, out)
    if bad >= 0:
        raise BlowUpError(bad)
    return out[0].copy()


def simulate(p: model.ModelParams, s0, spinup_days: float,
             record_days: float, stride: int = 1) -> Trajectory:
    """Compiled spinup-then-record (same contract as the reference path)."""
    dt = p.dt_model_days
    s = spinup_state(p, s0, spinup_days, dt)
    n_rec = int(round(record_days / dt))
    return run_l80(p, s, dt, n_rec, stride=stride, t0=0.0)


# ---------------------------------------------------------------------------
# MLP-backed closure kernels
# ---------------------------------------------------------------------------

@dataclass
class PackedNet:
    """Zero-padded weight stack of one tanh MLP, kernel-ready.

    ``dims`` lists layer widths input..output (length n_layers+1);
    ``W[l, :dims[l+1], :dims[l]]`` and ``b[l, :dims[l+1]]`` hold layer l.
    tanh applies to all layers but the last, which is linear.
    """

    dims: np.ndarray
    W: np.ndarray
    b: np.ndarray
    in_shift: np.ndarray
    in_scale: np.ndarray
    out_shift: np.ndarray
    out_scale: np.ndarray

    @classmethod
    def from_layers(cls, weights, biases, in_shift, in_scale,
                    out_shift, out_scale) -> "PackedNet":
        dims = [weights[0].shape[1]] + [w.shape[0] for w in weights]
        dmax = max(dims)
        nl = len(weights)
        W = np.zeros((nl, dmax, dmax))
        bvec = np.zeros((nl, dmax))
        for l, (w, bb) in enumerate(zip(weights, biases)):
            W[l, :w.shape[0], :w.shape[1]] = w
            bvec[l, :bb.size] = bb
        pad = lambda v: np.concatenate([v, np.zeros(dmax - v.size)]) \
            if v.size < dmax else np.asarray(v, dtype=float)
        return cls(np.asarray(dims, dtype=np.int64), W, bvec,
                   pad(in_shift), pad(in_scale), pad(out_shift),
                   pad(out_scale))

    def arrays(self):
        return (self.dims, self.W, self.b, self.in_shift, self.in_scale,
                self.out_shift, self.out_scale)


@njit(cache=True)
def _net_eval(u, dims, W, bvec, in_shift, in_scale, out_shift, out_scale,
              buf_a, buf_b, out):
    """Padded-MLP forward pass; writes the de-normalized output into out."""
    d0 = dims[0]
    for i in range(d0):
        buf_a[i] = (u[i] - in_shift[i]) / in_scale[i]
    nl = W.shape[0]
    src, dst = buf_a, buf_b
    for l in range(nl):
        din = dims[l]
        dout = dims[l + 1]
        for r in range(dout):
            acc = bvec[l, r]
            for q in range(din):
                acc += W[l, r, q] * src[q]
            if l < nl - 1:
                dst[r] = math.tanh(acc)
            else:
                dst[r] = acc
        src, dst = dst, src
    dlast = dims[nl]
    for r in range(dlast):
        out[r] = out_shift[r] + out_scale[r] * src[r]


def packed_forward(net: PackedNet, u) -> np.ndarray:
    """Evaluate a packed network once (reference/testing path)."""
    u = np.ascontiguousarray(u, dtype=np.float64)
    dmax = int(net.dims.max())
    buf_a = np.empty(dmax)
    buf_b = np.empty(dmax)
    out = np.empty(int(net.dims[-1]))
    _net_eval(u, *net.arrays(), buf_a, buf_b, out)
    return out


@njit(cache=True)
def _closure_rhs(y, a, b, c, nu0, scale, two_stage,
                 zdims, zW, zb, zis, zisc, zos, zosc,
                 xdims, xW, xb, xis, xisc, xos, xosc,
                 buf_a, buf_b, u6, zhat, xhat, dy):
    """Closure y-tendency: parameterize x from y, then the y-equation."""
    if two_stage:
        _net_eval(y, zdims, zW, zb, zis, zisc, zos, zosc, buf_a, buf_b, zhat)
        for i in range(3):
            u6[i] = y[i]
            u6[3 + i] = zhat[i]
        _net_eval(u6, xdims, xW, xb, xis, xisc, xos, xosc, buf_a, buf_b, xhat)
    else:
        _net_eval(y, xdims, xW, xb, xis, xisc, xos, xosc, buf_a, buf_b, xhat)
    for m in range(3):
        i, j, k = _CI[m], _CJ[m], _CK[m]
        dy[i] = scale * ((-a[k] * b[k] * xhat[j] * y[k]
                          - a[j] * b[j] * y[j] * xhat[k]
                          + c * (a[k] - a[j]) * y[j] * y[k]
                          - a[i] * xhat[i]
                          - nu0 * a[i] * a[i] * y[i]) / a[i])


@njit(cache=True)
def _closure_rk4(y0, dt, n_steps, stride, a, b, c, nu0, scale, two_stage,
                 zdims, zW, zb, zis, zisc, zos, zosc,
                 xdims, xW, xb, xis, xisc, xos, xosc, out):
    dmax = max(zW.shape[1], xW.shape[1], 6)
    buf_a = np.empty(dmax)
    buf_b = np.empty(dmax)
    u6 = np.empty(6)
    zhat = np.empty(3)
    xhat = np.empty(3)
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    tmp = np.empty(3)
    y = y0.copy()
    out[0, :] = y
    row = 1
    for step in range(1, n_steps + 1):
        _closure_rhs(y, a, b, c, nu0, scale, two_stage,
                     zdims, zW, zb, zis, zisc, zos, zosc,
                     xdims, xW, xb, xis, xisc, xos, xosc,
                     buf_a, buf_b, u6, zhat, xhat, k1)
        for i in range(3):
            tmp[i] = y[i] + 0.5 * dt * k1[i]
        _closure_rhs(tmp, a, b, c, nu0, scale, two_stage,
                     zdims, zW, zb, zis, zisc, zos, zosc,
                     xdims, xW, xb, xis, xisc, xos, xosc,
                     buf_a, buf_b, u6, zhat, xhat, k2)
        for i in range(3):
            tmp[i] = y[i] + 0.5 * dt * k2[i]
        _closure_rhs(tmp, a, b, c, nu0, scale, two_stage,
                     zdims, zW, zb, zis, zisc, zos, zosc,
                     xdims, xW, xb, xis, xisc, xos, xosc,
                     buf_a, buf_b, u6, zhat, xhat, k3)
        for i in range(3):
            tmp[i] = y[i] + dt * k3[i]
        _closure_rhs(tmp, a, b, c, nu0, scale, two_stage,
                     zdims, zW, zb, zis, zisc, zos, zosc,
                     xdims, xW, xb, xis, xisc, xos, xosc,
                     buf_a, buf_b, u6, zhat, xhat, k4)
        for i in range(3):
            y[i] = y[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i]
                                        + 2.0 * k3[i] + k4[i])
        if _state_bad(y, BLOWUP_THRESHOLD):
            return row, step
        if step % stride == 0:
            out[row, :] = y
            row += 1
    return row, -1


_DUMMY_NET = None


def _dummy_packed() -> PackedNet:
    """Placeholder z-net for single-stage closures (never evaluated)."""
    global _DUMMY_NET
    if _DUMMY_NET is None:
        eye = [np.zeros((3, 3))]
        _DUMMY_NET = PackedNet.from_layers(
            eye, [np.zeros(3)], np.zeros(3), np.ones(3),
            np.zeros(3), np.ones(3))
    return _DUMMY_NET


def run_packed_closure(p: model.ModelParams, x_net: PackedNet, y0,
                       dt: float, n_steps: int, stride: int = 1,
                       z_net: PackedNet | None = None,
                       t0: float = 0.0) -> Trajectory:
    """Integrate the closure y-equation with packed MLP parameterizations.

    With ``z_net`` given the x-estimate is x_net([y, z_net(y)]) (two-stage
    slow pair); otherwise x_net(y) directly (single net).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    y0 = np.ascontiguousarray(y0, dtype=np.float64)
    two_stage = z_net is not None
    zp = z_net if two_stage else _dummy_packed()
    out = np.empty((n_steps // stride + 1, 3))
    rows, bad = _closure_rk4(
        y0, float(dt), int(n_steps), int(stride),
        np.ascontiguousarray(p.a), np.ascontiguousarray(p.b),
        float(p.c), float(p.nu0), model.TIME_UNITS_PER_DAY, two_stage,
        *zp.arrays(), *x_net.arrays(), out)
    if bad >= 0:
        partial = Trajectory(t0, stride * dt, out[:rows]) if rows else None
        raise BlowUpError(bad, partial)
    return Trajectory(t0, stride * dt, out[:rows])

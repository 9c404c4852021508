"""Online closures: the y-equation driven by a parameterized divergent flow.

A closure system integrates only the rotational amplitudes y; at every
right-hand-side evaluation the divergent amplitudes x are replaced by a
:class:`~l80lab.mlp.Parameterization` estimate.  MLP-backed kinds run on
the compiled kernels; external callables fall back to the generic
integrator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model
from .errors import BlowUpError
from .integrate import Trajectory, integrate
from .kernels import PackedNet, run_packed_closure
from .mlp import MlpParams, Parameterization

__all__ = ["ClosureSystem", "closure_rhs", "run_closure"]


def _pack(m: MlpParams) -> PackedNet:
    return PackedNet.from_layers(m.weights, m.biases, m.in_shift,
                                 m.in_scale, m.out_shift, m.out_scale)


@dataclass
class ClosureSystem:
    """Model coefficients plus the x-parameterization plugged into them."""

    params: model.ModelParams
    param_map: Parameterization
    kind: str = field(default=None)

    def __post_init__(self):
        if self.kind is None:
            self.kind = self.param_map.kind
        if self.kind != self.param_map.kind:
            raise ValueError("kind does not match the parameterization")


def closure_rhs(y: np.ndarray, sys: ClosureSystem) -> np.ndarray:
    """Closure y-tendency (per model time unit) at the state y.

    Evaluates the parameterization to get the x-estimate, then applies the
    y-equation.  A non-finite estimate raises "parameterization blow-up".
    """
    y = np.asarray(y, dtype=float)
    xhat = np.asarray(sys.param_map.x_estimate(y), dtype=float)
    if xhat.shape != (3,):
        raise ValueError("parameterization must return a 3-vector")
    if not np.all(np.isfinite(xhat)):
        raise ValueError("parameterization blow-up")
    return model.y_equation_rhs(y, xhat, sys.params)


def run_closure(sys: ClosureSystem, y0, dt: float = None, n_steps: int = None,
                stride: int = 1, days: float = None,
                with_x: bool = False) -> Trajectory:
    """RK4 march of the closure system in day-time.

    Give either ``n_steps`` or ``days``; ``dt`` defaults to the model step
    carried by the coefficients.  Returns y(t) with 3 components, or 6
    (y plus the diagnosed x-estimate at the recorded instants) when
    ``with_x`` is set.  Blow-ups carry the step index and the partial y
    trajectory.
    """
    if dt is None:
        dt = sys.params.dt_model_days
    if (n_steps is None) == (days is None):
        raise ValueError("give exactly one of n_steps or days")
    if n_steps is None:
        n_steps = int(round(days / dt))
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (3,):
        raise ValueError("y0 must be a 3-vector")

    if sys.param_map.kind == "slow_pair":
        traj = run_packed_closure(sys.params, _pack(sys.param_map.x_net),
                                  y0, dt, n_steps, stride,
                                  z_net=_pack(sys.param_map.z_net))
    elif sys.param_map.kind == "vanilla":
        traj = run_packed_closure(sys.params, _pack(sys.param_map.x_net),
                                  y0, dt, n_steps, stride)
    else:
        rhs = lambda y: model.TIME_UNITS_PER_DAY * closure_rhs(y, sys)
        traj = integrate(rhs, y0, dt, n_steps, stride=stride)

    if not with_x:
        return traj
    xhat = np.atleast_2d(sys.param_map.x_estimate(traj.data))
    return Trajectory(traj.t0, traj.dt, np.hstack([traj.data, xhat]))

"""Nine-component primitive-equation truncation (Lorenz 1980).

The model couples divergent-flow amplitudes ``x``, rotational-flow
amplitudes ``y`` and thermal amplitudes ``z`` (three Fourier modes each)
through cyclic triad interactions:

    a_i dx_i/dt = -nu0 a_i^2 x_i - c (a_i - a_k) x_j y_k
                  + c (a_i - a_j) y_j x_k + a_i b_i x_j x_k
                  - 2 c^2 y_j y_k + a_i (y_i - z_i)
    a_i dy_i/dt = -a_k b_k x_j y_k - a_j b_j y_j x_k
                  + c (a_k - a_j) y_j y_k - a_i x_i - nu0 a_i^2 y_i
      dz_i/dt   = g0 a_i x_i - b_k x_j (z_k - h_k) - b_j (z_j - h_j) x_k
                  + c y_j (z_k - h_k) - c (z_j - h_j) y_k
                  - kappa0 a_i z_i + F_i

with (i, j, k) cycling over (1,2,3), (2,3,1), (3,1,2).

State layout
------------
Throughout the package a state is a flat float64 9-vector ordered
``(x1, x2, x3, y1, y2, y3, z1, z2, z3)``; the slices ``X``, ``Y``, ``Z``
index the three blocks.

Units
-----
The equations above are nondimensional with the Coriolis frequency scaled
to 1.  We anchor them to wall-clock time via f0 = 1e-4 s^-1, i.e. one model
time unit is 1e4 s and one day is ``TIME_UNITS_PER_DAY`` = 8.64 units.
Linearizing about the origin gives inertia-gravity oscillations at
frequencies sqrt(1 + g0*a_i) per unit: 3, 3 and 5 for the stock
parameters, so the dominant wave period is 2*pi/3 units ~ 0.24 day.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError

# flat-vector blocks: state s = (x1,x2,x3, y1,y2,y3, z1,z2,z3)
X = slice(0, 3)
Y = slice(3, 6)
Z = slice(6, 9)

# cyclic index triples (0-based): (i, j, k)
CYCLIC = ((0, 1, 2), (1, 2, 0), (2, 0, 1))

SECONDS_PER_TIME_UNIT = 1.0e4  # 1/f0 with f0 = 1e-4 s^-1
TIME_UNITS_PER_DAY = 86400.0 / SECONDS_PER_TIME_UNIT  # = 8.64

#: model step used for production runs: 0.75 min expressed in days
DT_DEFAULT_DAYS = 0.75 / 1440.0

#: stock integration start state: a small symmetry-breaking perturbation
#: (flat order x1..x3, y1..y3, z1..z3).  Production runs discard a spinup
#: transient (default 100 days) before recording, so only reaching the
#: attractor matters, not the exact values.
DEFAULT_INITIAL_STATE = np.array(
    [0.0, 0.0, 0.0, 0.1, 0.15, -0.05, 0.05, 0.0, 0.0])


@dataclass
class ModelParams:
    """Coefficients of the nine-component truncation.

    ``a``, ``b``, ``F``, ``h`` are per-mode 3-vectors; the rest are scalars.
    ``dt_model_days`` is the production integration step in days.
    """

    a: np.ndarray
    b: np.ndarray
    c: float
    nu0: float
    kappa0: float
    g0: float
    F: np.ndarray
    h: np.ndarray
    dt_model_days: float = DT_DEFAULT_DAYS

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        for name in ("a", "b", "F", "h"):
            if getattr(self, name).shape != (3,):
                raise ConfigError(f"{name} must be a 3-vector")
        if not np.all(self.a > 0.0):
            raise ConfigError("all of a must be strictly positive")
        if self.dt_model_days <= 0.0:
            raise ConfigError("dt_model_days must be positive")
        if self.nu0 < 0.0 or self.kappa0 < 0.0:
            raise ConfigError("nu0 and kappa0 must be nonnegative")
        vals = np.concatenate([self.a, self.b, self.F, self.h,
                               [self.c, self.nu0, self.kappa0, self.g0,
                                self.dt_model_days]])
        if not np.all(np.isfinite(vals)):
            raise ConfigError("model parameters must be finite")

    def replace(self, **kw) -> "ModelParams":
        d = self.asdict()
        d.update(kw)
        return ModelParams(**d)

    def asdict(self) -> dict:
        return {
            "a": self.a.copy(), "b": self.b.copy(), "c": self.c,
            "nu0": self.nu0, "kappa0": self.kappa0, "g0": self.g0,
            "F": self.F.copy(), "h": self.h.copy(),
            "dt_model_days": self.dt_model_days,
        }


def pack_state(x, y, z) -> np.ndarray:
    """Assemble a flat 9-vector from the three 3-vector blocks."""
    s = np.empty(9)
    s[X], s[Y], s[Z] = x, y, z
    return s


def unpack_state(s):
    """Split a flat 9-vector into (x, y, z) views."""
    s = np.asarray(s)
    return s[X], s[Y], s[Z]


def l80_rhs(s: np.ndarray, p: ModelParams) -> np.ndarray:
    """Tendency ds/dt (per model time unit) of the full nine-component model.

    The x- and y-equations are divided through by a_i; the z-equation is
    used as written.  Pure function: identical inputs give identical output.
    """
    s = np.asarray(s, dtype=float)
    if s.shape != (9,):
        raise ValueError("state must be a flat 9-vector")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite state")

    x, y, z = s[X], s[Y], s[Z]
    a, b, c = p.a, p.b, p.c
    # element i of roll(v, -1) is v_j, of roll(v, -2) is v_k
    aj, ak = np.roll(a, -1), np.roll(a, -2)
    bj, bk = np.roll(b, -1), np.roll(b, -2)
    xj, xk = np.roll(x, -1), np.roll(x, -2)
    yj, yk = np.roll(y, -1), np.roll(y, -2)
    zhj = np.roll(z - p.h, -1)
    zhk = np.roll(z - p.h, -2)

    dx = (-p.nu0 * a**2 * x - c * (a - ak) * xj * yk + c * (a - aj) * yj * xk
          + a * b * xj * xk - 2.0 * c**2 * yj * yk + a * (y - z)) / a
    dy = (-ak * bk * xj * yk - aj * bj * yj * xk + c * (ak - aj) * yj * yk
          - a * x - p.nu0 * a**2 * y) / a
    dz = (p.g0 * a * x - bk * xj * zhk - bj * zhj * xk
          + c * yj * zhk - c * zhj * yk - p.kappa0 * a * z + p.F)
    return np.concatenate([dx, dy, dz])


def y_equation_rhs(y: np.ndarray, x: np.ndarray, p: ModelParams) -> np.ndarray:
    """y-tendency (per model time unit) with the divergent flow supplied.

    Evaluates the rotational-flow block with ``x`` given externally; equals
    the y-block of :func:`l80_rhs` when ``x`` is the state's own x.  This is
    the equation closures integrate, with ``x`` coming from a
    parameterization.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != (3,) or x.shape != (3,):
        raise ValueError("x and y must be 3-vectors")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ValueError("non-finite state")
    a, b, c = p.a, p.b, p.c
    aj, ak = np.roll(a, -1), np.roll(a, -2)
    bj, bk = np.roll(b, -1), np.roll(b, -2)
    xj, xk = np.roll(x, -1), np.roll(x, -2)
    yj, yk = np.roll(y, -1), np.roll(y, -2)
    return (-ak * bk * xj * yk - aj * bj * yj * xk
            + c * (ak - aj) * yj * yk - a * x - p.nu0 * a**2 * y) / a


def rhs_per_day(p: ModelParams):
    """Tendency function in day-time: ds/d(day) = TIME_UNITS_PER_DAY * ds/dtau."""
    def rhs(s):
        return TIME_UNITS_PER_DAY * l80_rhs(s, p)
    return rhs


def energy_y(y: np.ndarray, p: ModelParams) -> float:
    """Quadratic invariant sum(a_i y_i^2) of the inviscid reduced y-system."""
    y = np.asarray(y)
    return float(np.sum(p.a * y**2))


# ---------------------------------------------------------------------------
# regime presets (flat key=value files)
# ---------------------------------------------------------------------------

_PRESET_KEYS = (
    "a1", "a2", "a3", "b1", "b2", "b3", "c", "nu0", "kappa0", "g0",
    "F1", "F2", "F3", "h1", "h2", "h3", "dt_model_days",
)

#: named regimes shipped with the package
PRESET_NAMES = ("hlf", "slow")


def parse_params(text: str) -> ModelParams:
    """Parse the flat key=value preset format.

    Lines are ``key=value``; blank lines and ``#`` comments are ignored.
    Exactly the documented keys are accepted; unknown or duplicate keys,
    or missing keys, raise :class:`ConfigError`.
    """
    seen = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _PRESET_KEYS:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        try:
            seen[key] = float(val)
        except ValueError:
            raise ConfigError(f"line {ln}: bad float {val!r} for {key}") from None
    missing = [k for k in _PRESET_KEYS if k not in seen]
    if missing:
        raise ConfigError(f"missing keys: {', '.join(missing)}")
    return ModelParams(
        a=[seen["a1"], seen["a2"], seen["a3"]],
        b=[seen["b1"], seen["b2"], seen["b3"]],
        c=seen["c"], nu0=seen["nu0"], kappa0=seen["kappa0"], g0=seen["g0"],
        F=[seen["F1"], seen["F2"], seen["F3"]],
        h=[seen["h1"], seen["h2"], seen["h3"]],
        dt_model_days=seen["dt_model_days"],
    )


def format_params(p: ModelParams) -> str:
    """Serialize parameters to the flat key=value preset format."""
    vals = {
        "a1": p.a[0], "a2": p.a[1], "a3": p.a[2],
        "b1": p.b[0], "b2": p.b[1], "b3": p.b[2],
        "c": p.c, "nu0": p.nu0, "kappa0": p.kappa0, "g0": p.g0,
        "F1": p.F[0], "F2": p.F[1], "F3": p.F[2],
        "h1": p.h[0], "h2": p.h[1], "h3": p.h[2],
        "dt_model_days": p.dt_model_days,
    }
    return "\n".join(f"{k} = {float(vals[k])!r}" for k in _PRESET_KEYS) + "\n"


def load_preset(name_or_path: str) -> ModelParams:
    """Load a named regime preset ('hlf', 'slow') or a preset file path."""
    if name_or_path in PRESET_NAMES:
        text = (resources.files("l80lab.presets")
                .joinpath(f"{name_or_path}.txt").read_text())
    else:
        try:
            with open(name_or_path, "r") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"no such preset or file: {name_or_path}") from exc
    return parse_params(text)


def gravity_wave_frequencies(p: ModelParams) -> np.ndarray:
    """Linear inertia-gravity frequencies sqrt(1 + g0*a_i), per model unit."""
    return np.sqrt(1.0 + p.g0 * p.a)


def gravity_wave_period_days(p: ModelParams) -> float:
    """Period (days) of the slowest linear inertia-gravity oscillation."""
    w = float(np.min(gravity_wave_frequencies(p)))
    return 2.0 * math.pi / w / TIME_UNITS_PER_DAY

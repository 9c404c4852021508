"""Small tanh MLPs: forward pass, exact gradients, full-batch training.

The parameterizations this package studies are tiny (tens to hundreds of
weights), trained full-batch with adaptive moment estimation and
best-validation bookkeeping.  Inputs and targets are affinely normalized
(shift to zero mean, scale to unit max amplitude) with statistics fitted
on the training split only; the optimized loss is the plain summed squared
error in physical units.

Three dataset construction/training flavors are provided:

* ``train``             -- one network on an already split Dataset,
* ``train_slow_pair``   -- two consecutive fits: y -> filtered z, then
                           (y, zhat(y)) -> filtered x, stage 1 frozen,
* ``train_vanilla``     -- one fit of unfiltered y -> unfiltered x.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InsufficientDataError, TrainingDivergedError
from .integrate import Trajectory
from .spectral import FilterSpec, filter_offsets, moving_average

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)

_MAGIC = b"L80N"
_VERSION = 1


def _derived_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(tag)])


@dataclass
class MlpParams:
    """Weights, biases and affine normalizations of one tanh MLP.

    ``weights[k]`` maps layer k-1 to layer k (row-major, out x in); the
    last layer is linear, all earlier ones pass through tanh.
    """

    weights: list
    biases: list
    in_shift: np.ndarray
    in_scale: np.ndarray
    out_shift: np.ndarray
    out_scale: np.ndarray

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for name in ("in_shift", "in_scale", "out_shift", "out_scale"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching weight/bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: inconsistent shapes")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: width mismatch")
        if self.in_shift.shape != (self.in_dim,) \
                or self.in_scale.shape != (self.in_dim,):
            raise ValueError("input normalization dimension mismatch")
        if self.out_shift.shape != (self.out_dim,) \
                or self.out_scale.shape != (self.out_dim,):
            raise ValueError("output normalization dimension mismatch")
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise ValueError("normalization scales must be positive")
        flat = np.concatenate([w.ravel() for w in self.weights]
                              + self.biases
                              + [self.in_shift, self.in_scale,
                                 self.out_shift, self.out_scale])
        if not np.all(np.isfinite(flat)):
            raise ValueError("parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    @property
    def width(self) -> int:
        return self.weights[0].shape[0] if self.n_hidden else 0

    @property
    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases],
                         self.in_shift.copy(), self.in_scale.copy(),
                         self.out_shift.copy(), self.out_scale.copy())


def init_mlp(in_dim: int, out_dim: int, n_hidden: int, width: int,
             seed: int = 0) -> MlpParams:
    """Seeded uniform [-r, r] init with r = sqrt(6/(fan_in+fan_out)).

    Biases start at zero; normalizations start as identity and are fitted
    by :func:`fit_normalization` before training.
    """
    if n_hidden < 1 or width < 1:
        raise ValueError("need at least one hidden layer and one neuron")
    rng = _derived_rng(seed, 1)
    dims = [in_dim] + [width] * n_hidden + [out_dim]
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        r = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-r, r, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return MlpParams(weights, biases, np.zeros(in_dim), np.ones(in_dim),
                     np.zeros(out_dim), np.ones(out_dim))


def fit_normalization(m: MlpParams, train_inputs, train_targets):
    """Fit the affine layers on the training split (in place).

    Per component: shift to zero mean, scale so the max |centered value|
    is 1 (degenerate components get scale 1).
    """
    def stats(arr):
        shift = arr.mean(axis=0)
        scale = np.max(np.abs(arr - shift), axis=0)
        scale[scale == 0.0] = 1.0
        return shift, scale

    m.in_shift, m.in_scale = stats(np.asarray(train_inputs, dtype=float))
    m.out_shift, m.out_scale = stats(np.asarray(train_targets, dtype=float))


def _forward_cached(m: MlpParams, U: np.ndarray):
    """Forward pass keeping hidden activations for backprop."""
    H = [(U - m.in_shift) / m.in_scale]
    for w, b in zip(m.weights[:-1], m.biases[:-1]):
        H.append(np.tanh(H[-1] @ w.T + b))
    raw = H[-1] @ m.weights[-1].T + m.biases[-1]
    return H, raw


def mlp_forward(m: MlpParams, u):
    """Evaluate the network; accepts a single vector or an (n, in_dim) batch."""
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    U = u[None, :] if single else u
    if U.shape[1] != m.in_dim:
        raise ValueError(f"expected input dimension {m.in_dim}, "
                         f"got {U.shape[1]}")
    _, raw = _forward_cached(m, U)
    out = m.out_shift + m.out_scale * raw
    return out[0] if single else out


def mlp_loss(m: MlpParams, inputs, targets) -> float:
    """Summed squared error of the de-normalized outputs."""
    err = mlp_forward(m, inputs) - np.asarray(targets, dtype=float)
    return float(np.sum(err * err))


def mlp_gradient(m: MlpParams, inputs, targets):
    """Exact reverse-mode gradient of :func:`mlp_loss`.

    Returns (loss, weight gradients, bias gradients), the gradient lists
    aligned with ``m.weights`` / ``m.biases``.
    """
    U = np.atleast_2d(np.asarray(inputs, dtype=float))
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    if U.shape[0] == 0:
        raise ValueError("empty batch")
    if U.shape[1] != m.in_dim or T.shape[1] != m.out_dim:
        raise ValueError("batch dimensions do not match the network")
    H, raw = _forward_cached(m, U)
    err = (m.out_shift + m.out_scale * raw) - T
    loss = float(np.sum(err * err))

    gw = [None] * len(m.weights)
    gb = [None] * len(m.biases)
    delta = 2.0 * err * m.out_scale
    gw[-1] = delta.T @ H[-1]
    gb[-1] = delta.sum(axis=0)
    back = delta @ m.weights[-1]
    for k in range(len(m.weights) - 2, -1, -1):
        pre = back * (1.0 - H[k + 1] ** 2)
        gw[k] = pre.T @ H[k]
        gb[k] = pre.sum(axis=0)
        if k > 0:
            back = pre @ m.weights[k]
    return loss, gw, gb


def relative_mse(pred, target) -> float:
    """Mean squared error normalized by the target variance (pooled)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    denom = float(np.sum((target - target.mean(axis=0)) ** 2))
    if denom == 0.0:
        denom = 1.0
    return float(np.sum((pred - target) ** 2)) / denom


# ---------------------------------------------------------------------------
# datasets and splits
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Row-aligned inputs/targets/times plus per-row split labels.

    Labels are 0 train / 1 val / 2 test (constants TRAIN, VAL, TEST), or -1
    before :func:`split_dataset` assigns them.  Rows are expected in
    chronological order; the predefined split relies on it.
    """

    inputs: np.ndarray
    targets: np.ndarray
    times: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        self.times = np.asarray(self.times, dtype=float)
        n = self.inputs.shape[0]
        if self.targets.shape[0] != n or self.times.shape != (n,):
            raise ValueError("row counts must agree")
        if self.labels is None:
            self.labels = np.full(n, -1, dtype=np.int8)
        else:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != (n,):
                raise ValueError("label count must match rows")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def rows(self, which: int):
        m = self.labels == which
        return self.inputs[m], self.targets[m]

    def counts(self):
        return tuple(int(np.sum(self.labels == w)) for w in (TRAIN, VAL, TEST))


def split_dataset(ds: Dataset, mode: str = "random", seed: int = 0) -> Dataset:
    """Assign 0.70/0.15/0.15 train/val/test labels.

    ``random``: uniform shuffle by seed, then the fractional cut.
    ``predefined``: contiguous chronological blocks, train before val
    before test.  Returns a new Dataset sharing the data arrays.
    """
    n = ds.n
    if n < 10:
        raise InsufficientDataError("need at least 10 rows to split")
    n_train = int(n * SPLIT_FRACTIONS[0])
    n_val = int(n * SPLIT_FRACTIONS[1])
    if n_train == 0 or n_val == 0 or n_train + n_val >= n:
        raise InsufficientDataError("degenerate split")
    order = np.arange(n)
    if mode == "random":
        order = _derived_rng(seed, 0).permutation(n)
    elif mode != "predefined":
        raise ConfigError(f"unknown split mode {mode!r}")
    labels = np.empty(n, dtype=np.int8)
    labels[order[:n_train]] = TRAIN
    labels[order[n_train:n_train + n_val]] = VAL
    labels[order[n_train + n_val:]] = TEST
    return Dataset(ds.inputs, ds.targets, ds.times, labels)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    """Best-validation parameters plus the per-epoch loss history.

    History entries are relative MSEs (see :func:`relative_mse`) of the
    train/val/test splits; index 0 is the untrained network, index e the
    state after epoch e.
    """

    params: MlpParams
    best_epoch: int
    history: dict
    final_losses: dict


def train(m0: MlpParams, ds: Dataset, epochs: int = 2000,
          learning_rate: float = 1e-3, lr_decay: float = 1.0,
          beta1: float = 0.9, beta2: float = 0.999,
          eps: float = 1e-8) -> TrainResult:
    """Full-batch adaptive-moment training with best-validation bookkeeping.

    Runs the full epoch budget (no halting) and returns the parameters with
    minimal validation loss over the run.  ``lr_decay`` shrinks the step
    geometrically per epoch (1.0 keeps it fixed); deep convergence on
    noiseless targets needs an annealed step.  Deterministic for a given
    initial network and dataset.  Raises :class:`TrainingDivergedError` on
    a non-finite loss, carrying the partial history.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if np.any(ds.labels < 0):
        raise ValueError("dataset must be split before training")
    m = m0.copy()
    X, T = ds.rows(TRAIN)
    splits = {"train": ds.rows(TRAIN), "val": ds.rows(VAL),
              "test": ds.rows(TEST)}
    hist = {k: np.empty(epochs + 1) for k in splits}

    def record(epoch):
        for k, (xs, ts) in splits.items():
            hist[k][epoch] = relative_mse(mlp_forward(m, xs), ts)
        return hist["val"][epoch]

    best_val = record(0)
    best_params = m.copy()
    best_epoch = 0

    mom_w = [np.zeros_like(w) for w in m.weights]
    mom_b = [np.zeros_like(b) for b in m.biases]
    vel_w = [np.zeros_like(w) for w in m.weights]
    vel_b = [np.zeros_like(b) for b in m.biases]

    for epoch in range(1, epochs + 1):
        loss, gw, gb = mlp_gradient(m, X, T)
        if not np.isfinite(loss):
            partial = {k: v[:epoch] for k, v in hist.items()}
            raise TrainingDivergedError(epoch, partial)
        step = learning_rate * lr_decay ** (epoch - 1)
        c1 = 1.0 - beta1 ** epoch
        c2 = 1.0 - beta2 ** epoch
        for k in range(len(m.weights)):
            mom_w[k] = beta1 * mom_w[k] + (1 - beta1) * gw[k]
            vel_w[k] = beta2 * vel_w[k] + (1 - beta2) * gw[k] ** 2
            m.weights[k] -= step * (mom_w[k] / c1) \
                / (np.sqrt(vel_w[k] / c2) + eps)
            mom_b[k] = beta1 * mom_b[k] + (1 - beta1) * gb[k]
            vel_b[k] = beta2 * vel_b[k] + (1 - beta2) * gb[k] ** 2
            m.biases[k] -= step * (mom_b[k] / c1) \
                / (np.sqrt(vel_b[k] / c2) + eps)
        val = record(epoch)
        if val < best_val:
            best_val = val
            best_params = m.copy()
            best_epoch = epoch

    final = {k: float(hist[k][best_epoch]) for k in hist}
    return TrainResult(best_params, best_epoch, hist, final)


# ---------------------------------------------------------------------------
# parameterizations
# ---------------------------------------------------------------------------

@dataclass
class Parameterization:
    """Evaluable map from the rotational flow y to (x, z) estimates.

    kinds: ``slow_pair`` composes two networks (x_net on [y, z_net(y)]),
    ``vanilla`` uses a single direct network, ``external`` wraps arbitrary
    callables (e.g. an analytically derived balance map).
    """

    kind: str
    x_net: MlpParams = None
    z_net: MlpParams = None
    x_fn: object = None
    z_fn: object = None

    def __post_init__(self):
        if self.kind not in ("slow_pair", "vanilla", "external"):
            raise ValueError(f"unknown parameterization kind {self.kind!r}")
        if self.kind == "slow_pair" and (self.x_net is None or self.z_net is None):
            raise ValueError("slow_pair needs both networks")
        if self.kind == "vanilla" and self.x_net is None:
            raise ValueError("vanilla needs x_net")

    def z_estimate(self, y):
        """z estimate at y, or None when the kind does not provide one."""
        y = np.asarray(y, dtype=float)
        if self.kind == "slow_pair":
            return mlp_forward(self.z_net, y)
        if self.kind == "external" and self.z_fn is not None:
            return np.asarray(self.z_fn(y), dtype=float)
        return None

    def x_estimate(self, y):
        """x estimate at y; this is what closures feed the y-equation."""
        y = np.asarray(y, dtype=float)
        if self.kind == "slow_pair":
            z = mlp_forward(self.z_net, y)
            u = np.concatenate([y, z], axis=-1)
            return mlp_forward(self.x_net, u)
        if self.kind == "vanilla":
            return mlp_forward(self.x_net, y)
        if self.x_fn is None:
            raise ValueError("external parameterization has no x map")
        return np.asarray(self.x_fn(y), dtype=float)


def train_slow_pair(traj: Trajectory, filter_spec: FilterSpec,
                    arch: tuple = (1, 5), split_mode: str = "random",
                    seed: int = 0, epochs: int = 2000,
                    learning_rate: float = 1e-3, lr_decay: float = 1.0):
    """Two consecutive fits of the slow motion from a full-model trajectory.

    Stage 1 regresses the filtered thermal block z on the *unfiltered* y at
    the same instants; stage 2 regresses the filtered divergent block x on
    (y, zhat(y)) with stage 1 frozen.  Both stages share the same split
    labels, architecture (hidden layers x width) and seed.

    Returns (Parameterization, stage info dict).
    """
    if traj.n_components != 9:
        raise ValueError("need a full 9-component trajectory")
    n_hidden, width = arch
    lo, hi = filter_offsets(traj, filter_spec)
    filtered = moving_average(traj, filter_spec)
    y_raw = traj.y_block()[lo:hi]
    times = traj.times()[lo:hi]

    ds1 = split_dataset(Dataset(y_raw, filtered.z_block(), times),
                        split_mode, seed)
    z0 = init_mlp(3, 3, n_hidden, width, seed=seed)
    fit_normalization(z0, *ds1.rows(TRAIN))
    res1 = train(z0, ds1, epochs=epochs, learning_rate=learning_rate,
                 lr_decay=lr_decay)

    zhat = mlp_forward(res1.params, y_raw)
    ds2 = Dataset(np.hstack([y_raw, zhat]), filtered.x_block(), times,
                  labels=ds1.labels)
    x0 = init_mlp(6, 3, n_hidden, width, seed=seed + 1)
    fit_normalization(x0, *ds2.rows(TRAIN))
    res2 = train(x0, ds2, epochs=epochs, learning_rate=learning_rate,
                 lr_decay=lr_decay)

    param = Parameterization("slow_pair", x_net=res2.params,
                             z_net=res1.params)
    return param, {"z_stage": res1, "x_stage": res2}


def train_vanilla(traj: Trajectory, arch: tuple = (1, 20),
                  split_mode: str = "random", seed: int = 0,
                  epochs: int = 2000, learning_rate: float = 1e-3,
                  lr_decay: float = 1.0):
    """Single direct fit of unfiltered y -> unfiltered x.

    Returns (Parameterization, stage info dict).
    """
    if traj.n_components != 9:
        raise ValueError("need a full 9-component trajectory")
    n_hidden, width = arch
    ds = split_dataset(Dataset(traj.y_block(), traj.x_block(), traj.times()),
                       split_mode, seed)
    m0 = init_mlp(3, 3, n_hidden, width, seed=seed)
    fit_normalization(m0, *ds.rows(TRAIN))
    res = train(m0, ds, epochs=epochs, learning_rate=learning_rate,
                lr_decay=lr_decay)
    return Parameterization("vanilla", x_net=res.params), {"x_stage": res}


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_mlp(path, m: MlpParams, sidecar: dict = None):
    """Write the binary network format (atomic), optionally with a JSON
    sidecar at <path>.json.

    Layout, little-endian: magic "L80N", u32 version=1, u32 in_dim,
    u32 out_dim, u32 hidden-layer count, u32 width, then f64 arrays:
    in_shift, in_scale, out_shift, out_scale, then per layer row-major
    weights followed by biases.
    """
    header = _MAGIC + struct.pack("<IIIII", _VERSION, m.in_dim, m.out_dim,
                                  m.n_hidden, m.width)
    blobs = [m.in_shift, m.in_scale, m.out_shift, m.out_scale]
    for w, b in zip(m.weights, m.biases):
        blobs.extend([w, b])
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        for arr in blobs:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)
    if sidecar is not None:
        tmp = f"{path}.json.tmp.{os.getpid()}"
        with open(tmp, "w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, f"{path}.json")


def load_mlp(path) -> MlpParams:
    """Read a network written by :func:`save_mlp`."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigError(f"{path}: not a network file (bad magic)")
        version, in_dim, out_dim, n_hidden, width = \
            struct.unpack("<IIIII", fh.read(20))
        if version != _VERSION:
            raise ConfigError(f"{path}: unsupported version {version}")
        payload = fh.read()

    dims = [in_dim] + [width] * n_hidden + [out_dim]
    counts = [in_dim, in_dim, out_dim, out_dim]
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        counts.extend([d_out * d_in, d_out])
    if len(payload) != 8 * sum(counts):
        raise ConfigError(f"{path}: truncated network payload")
    chunks = []
    at = 0
    for cnt in counts:
        chunks.append(np.frombuffer(payload, dtype="<f8", count=cnt,
                                    offset=at).astype(float))
        at += 8 * cnt
    in_shift, in_scale, out_shift, out_scale = chunks[:4]
    weights, biases = [], []
    for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        weights.append(chunks[4 + 2 * k].reshape(d_out, d_in))
        biases.append(chunks[5 + 2 * k])
    return MlpParams(weights, biases, in_shift, in_scale,
                     out_shift, out_scale)

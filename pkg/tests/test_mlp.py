import math

import numpy as np
import pytest

from l80lab import kernels
from l80lab.errors import InsufficientDataError, TrainingDivergedError
from l80lab.integrate import Trajectory
from l80lab.mlp import (TEST, TRAIN, VAL, Dataset, MlpParams, fit_normalization,
                        init_mlp, load_mlp, mlp_forward, mlp_gradient,
                        mlp_loss, relative_mse, save_mlp, split_dataset,
                        train, train_slow_pair, train_vanilla)
from l80lab.spectral import FilterSpec


def random_net(rng, in_dim=None, out_dim=None, n_hidden=None, width=None,
               with_norms=True):
    in_dim = in_dim or int(rng.integers(1, 5))
    out_dim = out_dim or int(rng.integers(1, 4))
    n_hidden = n_hidden or int(rng.integers(1, 4))
    width = width or int(rng.integers(1, 7))
    m = init_mlp(in_dim, out_dim, n_hidden, width,
                 seed=int(rng.integers(2**31)))
    for w in m.weights:
        w += 0.3 * rng.standard_normal(w.shape)
    for b in m.biases:
        b += 0.3 * rng.standard_normal(b.shape)
    if with_norms:
        m.in_shift = rng.standard_normal(in_dim)
        m.in_scale = rng.uniform(0.5, 2.0, in_dim)
        m.out_shift = rng.standard_normal(out_dim)
        m.out_scale = rng.uniform(0.5, 2.0, out_dim)
    return m


def fd_gradient(m, X, T, h=1e-6):
    """Central finite differences of mlp_loss, parameter by parameter."""
    gw = [np.zeros_like(w) for w in m.weights]
    gb = [np.zeros_like(b) for b in m.biases]
    for grads, params in ((gw, m.weights), (gb, m.biases)):
        for g, p in zip(grads, params):
            flat_g, flat_p = g.ravel(), p.ravel()
            for i in range(flat_p.size):
                keep = flat_p[i]
                flat_p[i] = keep + h
                up = mlp_loss(m, X, T)
                flat_p[i] = keep - h
                dn = mlp_loss(m, X, T)
                flat_p[i] = keep
                flat_g[i] = (up - dn) / (2 * h)
    return gw, gb


def max_relative_gradient_error(m, X, T):
    """Worst relative discrepancy, denominator floored at 1e-3 * max |g|."""
    _, gw, gb = mlp_gradient(m, X, T)
    fw, fb = fd_gradient(m, X, T)
    exact = np.concatenate([g.ravel() for g in gw + gb])
    approx = np.concatenate([g.ravel() for g in fw + fb])
    floor = 1e-3 * np.max(np.abs(exact))
    denom = np.maximum(np.maximum(np.abs(exact), np.abs(approx)), floor)
    return float(np.max(np.abs(exact - approx) / denom))


# -- forward pass --------------------------------------------------------------

def test_zero_network_outputs_its_bias():
    m = init_mlp(3, 2, 2, 4, seed=0)
    for w in m.weights:
        w[:] = 0.0
    out = mlp_forward(m, np.array([0.4, -1.0, 2.0]))
    np.testing.assert_array_equal(out, np.zeros(2))
    batch = mlp_forward(m, np.zeros((5, 3)))
    assert batch.shape == (5, 2)
    np.testing.assert_array_equal(batch, np.zeros((5, 2)))


def test_single_neuron_hand_computation():
    m = MlpParams(weights=[np.array([[0.2]]), np.array([[0.5]])],
                  biases=[np.array([0.1]), np.array([-0.2])],
                  in_shift=np.array([0.1]), in_scale=np.array([0.5]),
                  out_shift=np.array([1.5]), out_scale=np.array([2.0]))
    # by hand: u_hat = (0.3-0.1)/0.5; h = tanh(0.2*u_hat + 0.1);
    #          out = 1.5 + 2.0*(0.5*h - 0.2)
    by_hand = 1.5 + 2.0 * (0.5 * math.tanh(0.2 * 0.4 + 0.1) - 0.2)
    got = mlp_forward(m, np.array([0.3]))[0]
    assert got == pytest.approx(by_hand, abs=1e-15)
    assert got == pytest.approx(1.2780808681173301, abs=1e-14)


def test_output_shift_moves_output_by_the_shift():
    # affine structure; exact up to one rounding of the final addition
    rng = np.random.default_rng(0)
    m = random_net(rng, in_dim=2, out_dim=3)
    u = rng.standard_normal(2)
    base = mlp_forward(m, u)
    m2 = m.copy()
    m2.out_shift = m.out_shift + np.array([0.0, 2.5, -1.25])
    np.testing.assert_allclose(mlp_forward(m2, u) - base,
                               [0.0, 2.5, -1.25], rtol=0, atol=1e-14)


def test_forward_dimension_mismatch():
    m = init_mlp(3, 2, 1, 4, seed=1)
    with pytest.raises(ValueError, match="dimension"):
        mlp_forward(m, np.zeros(4))


def test_params_validation():
    with pytest.raises(ValueError):
        MlpParams([np.zeros((2, 3))], [np.zeros(3)],  # bias width off
                  np.zeros(3), np.ones(3), np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        MlpParams([np.zeros((2, 3))], [np.zeros(2)],
                  np.zeros(3), np.zeros(3),  # zero scale
                  np.zeros(2), np.ones(2))


# -- gradients -----------------------------------------------------------------

def test_zero_residual_batch_has_zero_gradient():
    rng = np.random.default_rng(2)
    m = random_net(rng, in_dim=3, out_dim=2)
    X = rng.standard_normal((12, 3))
    T = mlp_forward(m, X)
    loss, gw, gb = mlp_gradient(m, X, T)
    assert loss == 0.0
    for g in gw + gb:
        np.testing.assert_array_equal(g, np.zeros_like(g))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(10):
        m = random_net(rng)
        X = rng.standard_normal((int(rng.integers(4, 20)), m.in_dim))
        T = rng.standard_normal((X.shape[0], m.out_dim))
        assert max_relative_gradient_error(m, X, T) < 1e-5


def test_duplicated_batch_doubles_gradient():
    # sum structure of the loss; verified to floating-point accuracy
    rng = np.random.default_rng(4)
    m = random_net(rng, in_dim=2, out_dim=2)
    X = rng.standard_normal((7, 2))
    T = rng.standard_normal((7, 2))
    _, gw1, gb1 = mlp_gradient(m, X, T)
    _, gw2, gb2 = mlp_gradient(m, np.vstack([X, X]), np.vstack([T, T]))
    for g1, g2 in zip(gw1 + gb1, gw2 + gb2):
        np.testing.assert_allclose(g2, 2.0 * g1, rtol=1e-13)


def test_row_permutation_leaves_gradient_unchanged():
    rng = np.random.default_rng(5)
    m = random_net(rng, in_dim=3, out_dim=1)
    X = rng.standard_normal((30, 3))
    T = rng.standard_normal((30, 1))
    perm = rng.permutation(30)
    _, gw1, gb1 = mlp_gradient(m, X, T)
    _, gw2, gb2 = mlp_gradient(m, X[perm], T[perm])
    for g1, g2 in zip(gw1 + gb1, gw2 + gb2):
        np.testing.assert_allclose(g2, g1, rtol=1e-12)


def test_gradient_rejects_empty_batch():
    m = init_mlp(2, 1, 1, 2, seed=0)
    with pytest.raises(ValueError):
        mlp_gradient(m, np.zeros((0, 2)), np.zeros((0, 1)))


# -- splits ---------------------------------------------------------------------

def _toy_dataset(n=100, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    return Dataset(X, X[:, :1] * 2.0, np.arange(n, dtype=float))


def test_random_split_counts():
    ds = split_dataset(_toy_dataset(100), "random", seed=1)
    assert ds.counts() == (70, 15, 15)


def test_predefined_split_is_chronological():
    ds = split_dataset(_toy_dataset(100), "predefined")
    t = ds.times
    assert np.max(t[ds.labels == TRAIN]) < np.min(t[ds.labels == VAL])
    assert np.max(t[ds.labels == VAL]) < np.min(t[ds.labels == TEST])
    assert ds.counts() == (70, 15, 15)


def test_same_seed_same_labels():
    a = split_dataset(_toy_dataset(97), "random", seed=42)
    b = split_dataset(_toy_dataset(97), "random", seed=42)
    assert np.array_equal(a.labels, b.labels)
    c = split_dataset(_toy_dataset(97), "random", seed=43)
    assert not np.array_equal(a.labels, c.labels)


def test_split_input_checks():
    with pytest.raises(InsufficientDataError):
        split_dataset(_toy_dataset(9), "random")
    from l80lab.errors import ConfigError
    with pytest.raises(ConfigError):
        split_dataset(_toy_dataset(50), "alternating")


# -- training -------------------------------------------------------------------

def test_train_learns_linear_target():
    # realizable target: an annealed step drives the fit into the
    # small-weight regime where tanh is effectively linear
    rng = np.random.default_rng(6)
    X = rng.uniform(-1, 1, (120, 1))
    ds = split_dataset(Dataset(X, 2.0 * X, np.arange(120.0)), "random", 0)
    m0 = init_mlp(1, 1, 1, 4, seed=0)
    fit_normalization(m0, *ds.rows(TRAIN))
    res = train(m0, ds, epochs=16000, learning_rate=3e-2,
                lr_decay=10 ** (-2 / 16000.0))
    Xtr, Ttr = ds.rows(TRAIN)
    pred = mlp_forward(res.params, Xtr)
    assert float(np.mean((pred - Ttr) ** 2)) <= 1e-6


def test_early_stopping_returns_best_validation_epoch():
    rng = np.random.default_rng(7)
    X = rng.uniform(-1, 1, (80, 2))
    T = np.tanh(X @ np.array([[1.0], [-0.5]])) + 0.05 * rng.standard_normal((80, 1))
    ds = split_dataset(Dataset(X, T, np.arange(80.0)), "random", 1)
    m0 = init_mlp(2, 1, 1, 3, seed=2)
    fit_normalization(m0, *ds.rows(TRAIN))
    res = train(m0, ds, epochs=300)
    assert res.final_losses["val"] == np.min(res.history["val"])
    assert res.history["val"][res.best_epoch] == res.final_losses["val"]
    # re-evaluating the returned parameters reproduces the reported loss
    Xv, Tv = ds.rows(VAL)
    assert relative_mse(mlp_forward(res.params, Xv), Tv) == pytest.approx(
        res.final_losses["val"], rel=1e-12)


def test_training_run_is_deterministic():
    ds = split_dataset(_toy_dataset(60, seed=3), "random", 5)
    runs = []
    for _ in range(2):
        m0 = init_mlp(2, 1, 1, 3, seed=9)
        fit_normalization(m0, *ds.rows(TRAIN))
        runs.append(train(m0, ds, epochs=50))
    assert np.array_equal(runs[0].history["train"], runs[1].history["train"])
    for w1, w2 in zip(runs[0].params.weights, runs[1].params.weights):
        assert np.array_equal(w1, w2)


def test_non_finite_loss_aborts_with_history():
    ds = split_dataset(_toy_dataset(40, seed=4), "random", 0)
    m0 = init_mlp(2, 1, 1, 2, seed=0)
    m0.weights[-1][:] = 1e200  # loss overflows immediately
    m0.out_scale[:] = 1e200
    with pytest.raises(TrainingDivergedError) as exc:
        train(m0, ds, epochs=10)
    assert "val" in exc.value.history
    assert exc.value.history["train"].size >= 1


def test_target_rescaling_leaves_normalized_curves_unchanged():
    # scaling targets and the fitted output scale by the same factor keeps
    # the relative-MSE histories identical (adam steps are scale-free up to
    # its epsilon floor)
    rng = np.random.default_rng(8)
    X = rng.uniform(-1, 1, (120, 2))
    T = np.sin(X) @ np.array([[0.7, 0.1], [-0.2, 0.4]])
    hists = []
    for s in (1.0, 4.0):
        ds = split_dataset(Dataset(X, s * T, np.arange(120.0)), "random", 3)
        m0 = init_mlp(2, 2, 1, 4, seed=11)
        fit_normalization(m0, *ds.rows(TRAIN))
        hists.append(train(m0, ds, epochs=200).history["train"])
    np.testing.assert_allclose(hists[0], hists[1], rtol=1e-4)


def test_fit_normalization_uses_training_rows_only():
    X = np.vstack([np.linspace(-2, 2, 50)[:, None],
                   np.full((10, 1), 100.0)])
    T = np.hstack([X, np.full((60, 1), 7.0)])  # constant second target
    m = init_mlp(1, 2, 1, 2, seed=0)
    fit_normalization(m, X[:50], T[:50])
    assert abs(m.in_shift[0]) < 1e-12
    assert m.in_scale[0] == pytest.approx(2.0)
    assert m.out_scale[1] == 1.0  # degenerate component guard
    normalized = (X[:50] - m.in_shift) / m.in_scale
    assert np.max(np.abs(normalized)) == pytest.approx(1.0)


# -- two-stage and direct parameterization training ------------------------------

def _synthetic_linear_traj(n=1500, dt=0.01):
    # smooth slow y, with z and x exact linear functions of it
    t = dt * np.arange(n)
    y = 0.1 * np.column_stack([np.sin(2 * np.pi * t / 11.0),
                               0.6 * np.sin(2 * np.pi * t / 17.0 + 0.4),
                               0.3 * np.cos(2 * np.pi * t / 7.0)])
    A = np.array([[0.5, -0.2, 0.1], [0.3, 0.4, 0.0], [-0.1, 0.2, 0.6]])
    B = np.hstack([np.eye(3) * 0.2, np.array([[0.0, 0.5, 0.1],
                                              [0.4, -0.3, 0.2],
                                              [0.1, 0.0, -0.5]])])
    z = y @ A.T
    x = np.hstack([y, z]) @ B.T
    return Trajectory(0.0, dt, np.hstack([x, y, z]))


_ANNEAL = dict(epochs=10000, learning_rate=2e-2, lr_decay=10 ** (-2 / 10000.0))


def test_slow_pair_fits_realizable_linear_system():
    # a one-sample window makes the filter an identity, so the targets are
    # exactly linear in the inputs and both stages can fit to roundoff scale
    traj = _synthetic_linear_traj()
    param, info = train_slow_pair(traj, FilterSpec(window_days=1e-4),
                                  arch=(1, 8), split_mode="random", seed=0,
                                  **_ANNEAL)
    assert param.kind == "slow_pair"
    assert param.x_net.in_dim == 6  # y plus the stage-1 estimate
    y = traj.y_block()
    mse_z = np.mean((param.z_estimate(y) - traj.z_block()) ** 2)
    mse_x = np.mean((param.x_estimate(y) - traj.x_block()) ** 2)
    assert mse_z <= 1e-8
    assert mse_x <= 1e-8


def test_vanilla_fits_slow_only_data():
    traj = _synthetic_linear_traj()
    param, info = train_vanilla(traj, arch=(1, 8), split_mode="random",
                                seed=0, **_ANNEAL)
    assert param.kind == "vanilla"
    y = traj.y_block()
    assert np.mean((param.x_estimate(y) - traj.x_block()) ** 2) <= 1e-8
    est = param.x_estimate(y[100])
    np.testing.assert_allclose(est, traj.x_block()[100], atol=1e-3)
    assert param.z_estimate(y[100]) is None


# -- serialization ----------------------------------------------------------------

def test_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    m = random_net(rng, in_dim=6, out_dim=3, n_hidden=2, width=5)
    path = tmp_path / "net.l80n"
    save_mlp(path, m, sidecar={"arch": [2, 5], "seed": 7})
    back = load_mlp(path)
    for w1, w2 in zip(m.weights, back.weights):
        assert np.array_equal(w1, w2)
    for b1, b2 in zip(m.biases, back.biases):
        assert np.array_equal(b1, b2)
    np.testing.assert_array_equal(m.in_scale, back.in_scale)
    np.testing.assert_array_equal(m.out_shift, back.out_shift)
    assert (tmp_path / "net.l80n.json").exists()

    from l80lab.errors import ConfigError
    bad = tmp_path / "bad.l80n"
    bad.write_bytes(b"NOPE" + b"\0" * 40)
    with pytest.raises(ConfigError, match="magic"):
        load_mlp(bad)
    raw = path.read_bytes()
    (tmp_path / "short.l80n").write_bytes(raw[:-16])
    with pytest.raises(ConfigError, match="truncated"):
        load_mlp(tmp_path / "short.l80n")


def test_packed_net_matches_reference_forward():
    rng = np.random.default_rng(13)
    for _ in range(5):
        m = random_net(rng)
        net = kernels.PackedNet.from_layers(m.weights, m.biases, m.in_shift,
                                            m.in_scale, m.out_shift,
                                            m.out_scale)
        u = rng.standard_normal(m.in_dim)
        np.testing.assert_allclose(kernels.packed_forward(net, u),
                                   mlp_forward(m, u), rtol=1e-13, atol=1e-15)

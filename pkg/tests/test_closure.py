import numpy as np
import pytest

from l80lab import model
from l80lab.closure import ClosureSystem, closure_rhs, run_closure
from l80lab.errors import BlowUpError
from l80lab.integrate import integrate
from l80lab.mlp import Parameterization, init_mlp

from oracle_l80 import oracle_y_equation

HLF = model.load_preset("hlf")


def zero_map():
    return Parameterization("external", x_fn=lambda y: np.zeros(3))


def linear_map(M, d):
    return Parameterization("external",
                            x_fn=lambda y: np.atleast_2d(y) @ M.T + d
                            if np.ndim(y) > 1 else M @ y + d)


def test_zero_map_inviscid_conserves_y_energy():
    p = HLF.replace(nu0=0.0)
    sys = ClosureSystem(p, zero_map())
    rhs = lambda y: model.TIME_UNITS_PER_DAY * closure_rhs(y, sys)
    traj = integrate(rhs, np.array([0.5, -0.3, 0.2]), 0.001, 4000, stride=200)
    e = np.sum(p.a * traj.data**2, axis=1)
    assert np.max(np.abs(e - e[0])) / e[0] < 1e-10


def test_zero_map_with_damping_decays_monotonically():
    sys = ClosureSystem(HLF, zero_map())
    traj = run_closure(sys, np.array([0.5, -0.3, 0.2]), dt=0.01,
                       days=40.0, stride=50)
    e = np.sum(HLF.a * traj.data**2, axis=1)
    assert np.all(np.diff(e) < 0.0)
    # empty transition list downstream: the series never leaves zero's basin
    assert np.max(np.abs(traj.data)) <= 0.6


def test_closure_rhs_matches_symbolic_oracle_with_linear_map():
    rng = np.random.default_rng(10)
    M = rng.standard_normal((3, 3)) * 0.4
    d = rng.standard_normal(3) * 0.1
    sys = ClosureSystem(HLF, linear_map(M, d))
    for _ in range(5):
        y = rng.uniform(-1, 1, 3)
        got = closure_rhs(y, sys)
        want = oracle_y_equation(y, M @ y + d, HLF)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)


def test_exact_x_lookup_reproduces_full_model_tendency():
    # feeding back the true divergent flow at the matching state gives the
    # full model's y-tendency by construction
    rng = np.random.default_rng(11)
    for _ in range(5):
        s = rng.uniform(-0.8, 0.8, 9)
        param = Parameterization("external", x_fn=lambda y, s=s: s[model.X])
        sys = ClosureSystem(HLF, param)
        got = closure_rhs(s[model.Y], sys)
        want = model.l80_rhs(s, HLF)[model.Y]
        np.testing.assert_allclose(got, want, rtol=1e-14)


def test_parameterization_blowup_message():
    bad = Parameterization("external", x_fn=lambda y: np.array([np.nan, 0, 0]))
    sys = ClosureSystem(HLF, bad)
    with pytest.raises(ValueError, match="parameterization blow-up"):
        closure_rhs(np.zeros(3), sys)


def _small_nets(seed=0):
    z_net = init_mlp(3, 3, 1, 5, seed=seed)
    x_net = init_mlp(6, 3, 1, 5, seed=seed + 1)
    return Parameterization("slow_pair", x_net=x_net, z_net=z_net)


def test_kernel_path_matches_generic_integrator():
    y0 = np.array([0.3, -0.2, 0.25])
    for param in (_small_nets(),
                  Parameterization("vanilla", x_net=init_mlp(3, 3, 2, 4, 7))):
        sys = ClosureSystem(HLF, param)
        fast = run_closure(sys, y0, dt=0.005, n_steps=400, stride=10)
        rhs = lambda y: model.TIME_UNITS_PER_DAY * closure_rhs(y, sys)
        ref = integrate(rhs, y0, 0.005, 400, stride=10)
        np.testing.assert_allclose(fast.data, ref.data, rtol=1e-11,
                                   atol=1e-13)


def test_run_closure_is_bit_deterministic():
    sys = ClosureSystem(HLF, _small_nets())
    y0 = np.array([0.3, -0.2, 0.25])
    a = run_closure(sys, y0, days=2.0, stride=20)
    b = run_closure(sys, y0, days=2.0, stride=20)
    assert np.array_equal(a.data, b.data)


def test_storage_order_does_not_change_results():
    param = _small_nets(seed=3)
    shuffled = Parameterization(
        "slow_pair",
        x_net=param.x_net.copy(), z_net=param.z_net.copy())
    for net in (shuffled.x_net, shuffled.z_net):
        net.weights = [np.asfortranarray(w) for w in net.weights]
    y0 = np.array([0.1, 0.2, -0.3])
    a = run_closure(ClosureSystem(HLF, param), y0, days=1.0, stride=10)
    b = run_closure(ClosureSystem(HLF, shuffled), y0, days=1.0, stride=10)
    assert np.array_equal(a.data, b.data)


def test_diagnosed_x_series_on_request():
    sys = ClosureSystem(HLF, _small_nets(seed=5))
    y0 = np.array([0.3, -0.2, 0.25])
    traj = run_closure(sys, y0, days=0.5, stride=10, with_x=True)
    assert traj.n_components == 6
    xhat = sys.param_map.x_estimate(traj.data[:, :3])
    np.testing.assert_array_equal(traj.data[:, 3:], xhat)


def test_closure_blowup_carries_step_and_partial():
    net = init_mlp(3, 3, 1, 4, seed=1)
    net.out_scale[:] = 1e9  # guarantees divergence within a few steps
    sys = ClosureSystem(HLF, Parameterization("vanilla", x_net=net))
    with pytest.raises(BlowUpError, match="blow-up at step") as exc:
        run_closure(sys, np.array([0.1, 0.1, 0.1]), days=1.0, stride=5)
    assert exc.value.step >= 1
    assert exc.value.partial is None or exc.value.partial.n_components == 3


def test_kind_mismatch_rejected():
    with pytest.raises(ValueError):
        ClosureSystem(HLF, zero_map(), kind="vanilla")


def test_run_closure_argument_checks():
    sys = ClosureSystem(HLF, zero_map())
    with pytest.raises(ValueError):
        run_closure(sys, np.zeros(3))  # neither n_steps nor days
    with pytest.raises(ValueError):
        run_closure(sys, np.zeros(3), n_steps=10, days=1.0)
    with pytest.raises(ValueError):
        run_closure(sys, np.zeros(2), days=1.0)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncsa.errors import ConfigError, InsufficientHorizon
from asyncsa.inclusion import (FlowSampler, LyapunovSpec, apt_distance, eta_violation_flags, euler_flow,
                               finite_difference_gradient, kushner_clark_sup, kushner_clark_trend,
                               lyapunov_check, max_inner_product, relative_step_integral)
from asyncsa.mdp import (lyapunov_W, lyapunov_W_gradient, policy_scaled_field, random_model, value_iteration)
from asyncsa.mean_field import LinearField, OmegaBox, ScaledField
from asyncsa.sa_engine import AsyncSA, NoiseModel, interpolate
from asyncsa.scheduler import ConstantKernel, UpdateFamily
from asyncsa.stepsize import Schedule


def scaled(field, eps=0.5):
    return ScaledField(field, OmegaBox(eps, field.dim))


NEG1 = scaled(LinearField.negative_identity(1))


def test_euler_linear_identity_omega():
    b = euler_flow(FlowSampler(NEG1, 0.01, horizon=1.0), [2.0], 1, np.random.default_rng(0))
    assert abs(b.paths[0, -1, 0] - 2 * np.exp(-1)) <= 0.02


def test_euler_linear_scaled_omega():
    b = euler_flow(FlowSampler(NEG1, 0.01, horizon=1.0, omega=[0.5]), [2.0], 1, np.random.default_rng(0))
    assert abs(b.paths[0, -1, 0] - 2 * np.exp(-0.5)) <= 0.02


def test_zero_horizon_bundle():
    b = euler_flow(FlowSampler(NEG1, 0.01, "per-step-random-omega", horizon=0.0), [3.0], 4,
                   np.random.default_rng(0))
    assert b.paths.shape == (4, 1, 1)
    assert np.all(b.paths == 3.0)


def test_euler_first_order():
    # halving dt halves the terminal error on the linear field
    err = []
    for dt in (0.02, 0.01):
        b = euler_flow(FlowSampler(NEG1, dt, horizon=1.0), [2.0], 1, np.random.default_rng(0))
        err.append(abs(b.paths[0, -1, 0] - 2 * np.exp(-1)))
    assert 1.5 <= err[0] / err[1] <= 2.5


def test_sampler_validation():
    with pytest.raises(ConfigError):
        FlowSampler(NEG1, 0.2)
    with pytest.raises(ConfigError):
        FlowSampler(NEG1, 0.03, horizon=1.0)
    with pytest.raises(ConfigError):
        FlowSampler(NEG1, policy="adaptive")
    with pytest.raises(ConfigError):
        FlowSampler(NEG1, omega=[0.1])


def test_blow_up_flagged():
    grow = scaled(LinearField(np.eye(1)))
    b = euler_flow(FlowSampler(grow, 0.1, horizon=10.0), [1.0], 1, np.random.default_rng(0))
    assert b.blown_up[0]
    assert np.isnan(b.paths[0, -1, 0])


def test_corner_sweep_paths_differ():
    field = scaled(LinearField.negative_identity(2), 0.2)
    b = euler_flow(FlowSampler(field, 0.05, "corner-sweep", horizon=1.0), [1.0, 1.0], 4, np.random.default_rng(0))
    ends = {tuple(np.round(p[-1], 12)) for p in b.paths}
    assert len(ends) == 4


def run(field, n, P=None, family=None, noise=None, schedule=Schedule("power", 1.0), seed=0, x0=None):
    k = field.dim
    family = family or UpdateFamily.full(k)
    P = np.eye(1) if P is None else P
    x0 = np.ones(k) if x0 is None else x0
    return AsyncSA(field, schedule, ConstantKernel(P), family, noise).run(x0, n, seed=seed)


def test_apt_self_distance_exact_on_constant_field():
    field = LinearField(np.zeros((2, 2)), [1.0, -0.5])
    log = run(field, 2000)
    rep = apt_distance(log, FlowSampler(scaled(field), 0.01), [0.5, 2.0, 5.0], 1.0, n_selections=2)
    assert rep.distances.max() <= 1e-10
    assert rep.bundle_size == 2


def test_apt_distance_within_euler_step_on_linear_field():
    field = LinearField.negative_identity(2)
    log = run(field, 10 ** 4, x0=[2.0, -1.0])
    rep = apt_distance(log, FlowSampler(scaled(field), 0.01), [3.0, 6.0], 2.0, n_selections=1)
    assert np.all(rep.distances >= 0)
    assert rep.distances.max() <= 0.01 * field.growth_constant * (1 + np.sqrt(5))


def test_apt_pure_noise_equals_oscillation():
    zero = LinearField(np.zeros((2, 2)))
    log = run(zero, 5000, noise=NoiseModel("gaussian", 1.0), seed=3)
    t, T = 4.0, 1.0
    rep = apt_distance(log, FlowSampler(scaled(zero), 0.01), [t], T, n_selections=3)
    s = np.arange(101) * 0.01
    osc = np.linalg.norm(interpolate(log, t + s) - interpolate(log, t), axis=1).max()
    assert rep.distances[0] == pytest.approx(osc, abs=1e-12)


def test_apt_horizon_check():
    field = LinearField.negative_identity(1)
    log = run(field, 100)
    with pytest.raises(InsufficientHorizon):
        apt_distance(log, FlowSampler(scaled(field)), [log.tau_bar[-1]], 1.0)


def test_kushner_clark_zero_noise():
    log = run(LinearField.negative_identity(2), 3000)
    rep = kushner_clark_sup(log, 1.0, 100)
    assert rep.noise_sup == 0.0
    assert rep.end > rep.start


def test_kushner_clark_window_sum():
    # direct recomputation of the partial-sum sup
    log = run(LinearField.negative_identity(2), 3000, P=np.full((2, 2), 0.5), family=UpdateFamily.singletons(2),
              noise=NoiseModel("gaussian", 1.0), seed=2)
    rep = kushner_clark_sup(log, 1.0, 200)
    best, acc = 0.0, np.zeros(2)
    for i in range(201, rep.end + 1):
        acc = acc + log.bar_alpha[i] * log.mu[i] * log.V[i]
        best = max(best, np.linalg.norm(acc))
    assert rep.noise_sup == pytest.approx(best, rel=1e-12)


def test_companion_zero_with_full_updates():
    log = run(LinearField.negative_identity(2), 2000)
    assert kushner_clark_sup(log, 1.0, 50, epsilon=0.3).companion_sup == 0.0


def test_starved_component_flags_epsilon():
    # component 2 is picked 1% of the time and owns about 14% of tau_bar; eps = 0.5 overstates it
    field = LinearField(np.zeros((2, 2)), [1.0, 1.0])
    P = np.array([[0.99, 0.01], [0.99, 0.01]])
    log = run(field, 20000, P=P, family=UpdateFamily.singletons(2), schedule=Schedule("power", 0.6), seed=1)
    starts = [int(np.searchsorted(log.tau_bar, t)) for t in (20.0, 100.0)]
    reports, _, comp_flag = kushner_clark_trend(log, 1.0, starts, epsilon=0.5)
    assert comp_flag
    assert reports[-1].companion_sup > 0.3
    ints, flags = eta_violation_flags(log, 1.0, 0.5, [20.0, 100.0])
    assert np.all(flags[:, 1]) and not np.any(flags[:, 0])


def test_relative_step_full_updates():
    log = run(LinearField.negative_identity(3), 500)
    np.testing.assert_allclose(relative_step_integral(log, None, 0.7, 2.5), 2.5, rtol=1e-12)


def test_relative_step_never_updated():
    log = run(LinearField.negative_identity(2), 500, P=np.array([[1.0, 0.0], [1.0, 0.0]]),
              family=UpdateFamily.singletons(2))
    assert relative_step_integral(log, 1, 0.5, 2.0) == 0.0
    _, flags = eta_violation_flags(log, 1.0, 0.2, [0.5, 1.5, 3.0])
    assert np.all(flags[:, 1])


def test_relative_step_window_checks():
    log = run(LinearField.negative_identity(1), 50)
    with pytest.raises(ConfigError):
        relative_step_integral(log, 0, -1.0, 1.0)
    with pytest.raises(InsufficientHorizon):
        relative_step_integral(log, 0, 0.0, log.tau_bar[-1] + 1)


@pytest.fixture(scope="module")
def overlapping_log():
    fam = UpdateFamily(((0,), (1, 2), (0, 2)), 3)
    return run(LinearField.negative_identity(3), 4000, P=np.full((3, 3), 1 / 3), family=fam,
               schedule=Schedule("power", 0.7), seed=4)


@settings(max_examples=30)
@given(st.floats(0.0, 30.0), st.floats(0.0, 5.0))
def test_relative_step_bookkeeping(overlapping_log, t, v):
    log = overlapping_log
    total = relative_step_integral(log, None, t, v).sum()
    # brute-force integral of sum_i u_i on a fine partition of the window knots
    knots = np.concatenate([[t], log.tau_bar[(log.tau_bar > t) & (log.tau_bar < t + v)], [t + v]])
    mids = 0.5 * (knots[:-1] + knots[1:])
    k = np.searchsorted(log.tau_bar, mids, side="right") - 1
    brute = np.sum(np.diff(knots) * log.mu[k + 1].sum(axis=1))
    assert total == pytest.approx(brute, rel=1e-10, abs=1e-12)


def test_relative_step_ranges(overlapping_log):
    ints = relative_step_integral(overlapping_log, None, 5.0, 3.0)
    assert np.all((ints >= 0) & (ints <= 3.0 + 1e-12))


def quadratic(sign=1.0):
    return LyapunovSpec(lambda x: sign * float(x @ x), lambda x: np.linalg.norm(x) < 1e-9,
                        lambda x: 2 * sign * x)


def test_lyapunov_quadratic_passes():
    field = scaled(LinearField.negative_identity(3), 0.1)
    probes = np.random.default_rng(0).normal(size=(20, 3))
    rep = lyapunov_check(quadratic(), FlowSampler(field, 0.05, horizon=1.0), probes)
    assert rep.passed
    assert np.all(rep.max_inner < 0)
    x = probes[0]
    assert max_inner_product(quadratic(), field, x, [np.full(3, 0.1)]) == pytest.approx(-0.2 * x @ x)


def test_lyapunov_sign_flip_fails_everywhere():
    field = scaled(LinearField.negative_identity(3), 0.1)
    probes = np.random.default_rng(0).normal(size=(20, 3))
    rep = lyapunov_check(quadratic(-1.0), FlowSampler(field, 0.05, horizon=1.0), probes)
    assert not rep.passed
    assert np.all(rep.max_inner > 0)
    assert not np.any(rep.decrease_ok)


def test_lyapunov_target_skipped():
    field = scaled(LinearField.negative_identity(2))
    rep = lyapunov_check(quadratic(), FlowSampler(field, 0.05, horizon=0.5), [np.zeros(2), np.ones(2)])
    assert rep.skipped == 1 and rep.max_inner.size == 1


def test_lyapunov_requires_gradient():
    spec = LyapunovSpec(lambda x: float(np.abs(x).sum()), lambda x: False, differentiable=False)
    with pytest.raises(ConfigError):
        spec.grad(np.ones(2))
    no_grad = LyapunovSpec(lambda x: float(x @ x), lambda x: False, fd_step=None)
    with pytest.raises(ConfigError):
        no_grad.grad(np.ones(2))
    fallback = LyapunovSpec(lambda x: float(x @ x), lambda x: False)
    np.testing.assert_allclose(fallback.grad(np.array([1.0, -2.0])), [2.0, -4.0], rtol=1e-8)


@pytest.fixture(scope="module")
def two_state():
    model = random_model(2, 2, 0.9, seed=3)
    return model, value_iteration(model).V


def mdp_spec(model, V_star):
    S, A = model.n_states, model.n_actions
    W = lambda x: lyapunov_W(model, x.reshape(S, A), V_star)
    return LyapunovSpec(W, lambda x: W(x) <= 1e-9, lambda x: lyapunov_W_gradient(model, x.reshape(S, A)).ravel())


def test_mdp_lyapunov_probes_pass(two_state):
    model, V_star = two_state
    rng = np.random.default_rng(7)
    probes = [rng.dirichlet(np.ones(2), size=2).ravel() for _ in range(40)]
    field = policy_scaled_field(model, 0.05)
    rep = lyapunov_check(mdp_spec(model, V_star), FlowSampler(field, 0.05, horizon=1.0), probes, rng)
    assert rep.passed
    assert rep.skipped == 0


def test_mdp_gradient_matches_finite_differences(two_state):
    model, V_star = two_state
    spec = mdp_spec(model, V_star)
    rng = np.random.default_rng(8)
    for _ in range(100):
        x = rng.dirichlet(np.ones(2), size=2).ravel()
        g = spec.grad(x)
        fd = finite_difference_gradient(spec.W, x, 1e-6)
        assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(g)

import numpy as np
import pytest

from asyncsa.errors import AssumptionViolation, BoundednessViolation, ConfigError
from asyncsa.mean_field import FunctionField
from asyncsa.sa_engine import AsyncSA, NoiseModel
from asyncsa.scheduler import ConstantKernel, UpdateFamily
from asyncsa.stepsize import Schedule
from asyncsa.two_timescale import (FastLimitOracle, JointFamily, StackedField, TwoTimescaleSA, ratio_trend,
                                   tracking_error)

SLOW = Schedule("power", 1.0)
FAST = Schedule("power", 0.6)


def coupled(F, G, family, P, **kw):
    return TwoTimescaleSA(StackedField(F, family.k), StackedField(G, family.k), SLOW, FAST,
                          ConstantKernel(P), family, **kw)


def test_decoupled_decay():
    fam = JointFamily((((0, 1), (0,)),), 2, 1)
    eng = coupled(lambda x, y: np.zeros(2), lambda x, y: -y, fam, [[1.0]])
    log = eng.run([1.0, 2.0], [5.0], 2000, seed=0)
    np.testing.assert_array_equal(log.x[-1], [1.0, 2.0])
    assert abs(log.y[-1, 0]) < 1e-12


@pytest.fixture(scope="module")
def random_joint_log():
    fam = JointFamily((((0,), (0,)), ((1,), (0, 1)), ((0, 1), (1,))), 2, 2)
    P = np.full((3, 3), 1 / 3)
    eng = coupled(lambda x, y: y - x, lambda x, y: x - y, fam, P,
                  noise_x=NoiseModel("gaussian", 0.3), noise_y=NoiseModel("gaussian", 0.3))
    return fam, eng.run([1.0, -1.0], [0.0, 0.0], 10 ** 5, seed=1)


def test_ratio_bound_at_1e5(random_joint_log):
    _, log = random_joint_log
    assert log.ratio[10 ** 5] <= 0.05


def test_ratio_trend(random_joint_log):
    _, log = random_joint_log
    first, last = ratio_trend(log.ratio)
    assert last < first


def test_joint_counter_consistency(random_joint_log):
    fam, log = random_joint_log
    mx, my = fam.masks()
    np.testing.assert_array_equal(log.mask_x[1:], mx[log.subset[1:]])
    np.testing.assert_array_equal(log.mask_y[1:], my[log.subset[1:]])
    nu = log.mask_x.cumsum(axis=0)
    phi = log.mask_y.cumsum(axis=0)
    alpha = np.where(log.mask_x, SLOW.values(np.maximum(nu, 1)), 0).max(axis=1)
    gamma = np.where(log.mask_y, FAST.values(np.maximum(phi, 1)), 0).max(axis=1)
    np.testing.assert_array_equal(log.bar_alpha[1:], alpha[1:])
    np.testing.assert_array_equal(log.bar_gamma[1:], gamma[1:])


def test_tracks_fast_equilibrium(random_joint_log):
    # G = x - y has Lambda(x) = x
    _, log = random_joint_log
    oracle = FastLimitOracle(lambda x: x)
    assert tracking_error(log.y[-1], log.x[-1], oracle) < 0.05


def test_pinned_fast_matches_single_timescale():
    lam = lambda x: np.array([0.5 * x.sum()])
    F = lambda x, y: -x + 0.5 * y[0]
    fam = JointFamily((((0,), (0,)), ((1,), (0,))), 2, 1)
    P = np.array([[0.3, 0.7], [0.6, 0.4]])
    noise = NoiseModel("gaussian", 0.5)
    log = coupled(F, lambda x, y: -y, fam, P, noise_x=noise, pin_fast=lam).run([1.0, -2.0], [0.0], 3000, seed=4)
    single = AsyncSA(FunctionField(lambda x: F(x, lam(x)), 2, 2.0), SLOW, ConstantKernel(P),
                     UpdateFamily.singletons(2), noise).run([1.0, -2.0], 3000, seed=4)
    np.testing.assert_array_equal(log.subset, single.subset)
    assert np.abs(log.x - single.x).max() <= 1e-15
    np.testing.assert_allclose(log.y[:, 0], 0.5 * log.x.sum(axis=1))


def test_schedule_pairing_enforced():
    fam = JointFamily((((0,), (0,)),), 1, 1)
    with pytest.raises(ConfigError, match="B2"):
        TwoTimescaleSA(None, None, FAST, SLOW, ConstantKernel([[1.0]]), fam)
    with pytest.raises(ConfigError):
        TwoTimescaleSA(None, None, FAST, FAST, ConstantKernel([[1.0]]), fam)


def test_joint_family_validation():
    with pytest.raises(ConfigError):
        JointFamily((((0,), ()),), 1, 1)
    with pytest.raises(ConfigError):
        JointFamily((((0,), (0,)), ((0,), (0,))), 1, 1)
    with pytest.raises(AssumptionViolation):
        JointFamily((((0,), (0,)),), 1, 2)


def test_boundedness_names_b1():
    fam = JointFamily((((0,), (0,)),), 1, 1)
    eng = coupled(lambda x, y: np.zeros(1), lambda x, y: y, fam, [[1.0]], box_y=([-3.0], [3.0]))
    with pytest.raises(BoundednessViolation) as exc:
        eng.run([0.0], [1.0], 1000, seed=0)
    assert exc.value.assumption == "B1(a)"


def test_tracking_error_examples():
    oracle = FastLimitOracle(lambda x: np.array([1.0]))
    assert tracking_error([1.0], [0.0], oracle) == 0.0
    assert tracking_error([3.0], [0.0], oracle) == 2.0


def test_oracle_lipschitz_probe():
    oracle = FastLimitOracle(lambda x: 3.0 * x)
    grid = [np.array([t]) for t in np.linspace(-1, 1, 9)]
    assert oracle.lipschitz_probe(grid) == pytest.approx(3.0)


def test_coupled_csv(tmp_path, random_joint_log):
    _, log = random_joint_log
    path = tmp_path / "c.csv"
    log.to_csv(path, thin=1000)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,tau_bar,rho_bar,x_1,x_2,y_1,y_2,ratio"
    assert len(lines) == 102

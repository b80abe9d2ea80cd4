"""Stratonovich conversion, controlled ODE solves, and the MC baseline."""

import math

import numpy as np
import pytest

from sdecub import (
    DimensionMismatch,
    NonFiniteState,
    PiecewisePath,
    concat_path,
    degree3_formula,
    initial_state,
    ito_to_stratonovich,
    make_field,
    make_partition,
    solve_controlled_ode,
    solve_sde_mc,
)
from sdecub.estimator import PathFunctional, cubature_estimate
from sdecub.fields import brownian_field, drift_only_field, scaled_diffusion_field
from sdecub.ode import forward_difference_jacobian


def line_path(slope=1.0):
    return PiecewisePath([0.0, 1.0], [[0.0, 0.0], [1.0, slope]])


def zero_path():
    return PiecewisePath([0.0, 1.0], [[0.0, 0.0], [1.0, 0.0]])


class TestItoToStratonovich:
    def test_constant_sigma_no_correction(self):
        spec = brownian_field(1.0)
        fields = spec.stratonovich()
        x = np.array([[0.3, 0.7]])
        drift = fields.drift(x)
        assert drift[0, 0] == 1.0  # time component
        assert drift[0, 1] == 0.0  # mu = 0, no correction

    def test_scaled_diffusion_correction(self):
        # sigma(x) = x, mu = 0: corrected drift is -x/2
        spec = scaled_diffusion_field(1.0)
        fields = spec.stratonovich()
        x = np.array([[0.0, 2.0]])
        assert fields.drift(x)[0, 1] == pytest.approx(-1.0)

    def test_correction_independent_of_mu(self):
        def mu_a(t, x):
            return np.zeros_like(x)

        def mu_b(t, x):
            return np.full_like(x, 0.7)

        def sig(t, x):
            return x[:, :, None]

        fa = ito_to_stratonovich(mu_a, sig, 1, 1)
        fb = ito_to_stratonovich(mu_b, sig, 1, 1)
        x = np.array([[0.2, 1.3]])
        assert fb.drift(x)[0, 1] - fa.drift(x)[0, 1] == pytest.approx(0.7, rel=1e-7)

    def test_forward_difference_matches_analytic(self):
        spec = scaled_diffusion_field(0.8)
        x = np.array([[1.7]])
        fd = forward_difference_jacobian(spec.sigma, np.zeros(1), x)
        exact = spec.sigma_jacobian(np.zeros(1), x)
        assert fd == pytest.approx(exact, abs=1e-6)

    def test_dimension_mismatch(self):
        def mu(t, x):
            return np.zeros((x.shape[0], 3))

        def sig(t, x):
            return np.zeros((x.shape[0], 1, 1))

        with pytest.raises(DimensionMismatch):
            ito_to_stratonovich(mu, sig, 1, 1)


class TestSolveControlledOde:
    def test_constant_fields(self):
        spec = brownian_field(1.0)
        fields = spec.stratonovich()
        traj = solve_controlled_ode(fields, line_path(0.8), initial_state(v=np.zeros(1)))
        # phi(t) = (t, 0.8 t) for constant unit diffusion
        assert traj.values[-1, 0] == pytest.approx(1.0, abs=1e-12)
        assert traj.values[-1, 1] == pytest.approx(0.8, abs=1e-12)

    def test_scalar_exponential(self):
        # dx = x domega with omega = t: x(1) = e
        def mu(t, x):
            return x

        def sig(t, x):
            return np.zeros((x.shape[0], 1, 1))

        fields = ito_to_stratonovich(mu, sig, 1, 1)
        x0 = initial_state(v=np.array([1.0]))
        traj = solve_controlled_ode(fields, zero_path(), x0, steps_per_segment=100)
        assert traj.values[-1, 1] == pytest.approx(math.e, rel=1e-8)

    def test_fourth_order_convergence(self):
        def mu(t, x):
            return x

        def sig(t, x):
            return np.zeros((x.shape[0], 1, 1))

        fields = ito_to_stratonovich(mu, sig, 1, 1)
        x0 = initial_state(v=np.array([1.0]))
        errors = []
        steps = [8, 16, 32, 64]
        for n in steps:
            traj = solve_controlled_ode(fields, zero_path(), x0, steps_per_segment=n)
            errors.append(abs(traj.values[-1, 1] - math.e))
        order = np.polyfit(np.log(steps), np.log(errors), 1)[0]
        assert -order >= 3.8

    def test_stratonovich_zero_path_flow(self):
        # Ito sigma(x)=x, mu=0: along a zero path the corrected drift gives
        # exp(-t/2) * x0
        spec = scaled_diffusion_field(1.0)
        traj = solve_controlled_ode(
            spec.stratonovich(), zero_path(), initial_state(v=np.array([1.0])),
            steps_per_segment=64,
        )
        assert traj.values[-1, 1] == pytest.approx(math.exp(-0.5), rel=1e-8)

    def test_time_component_exact(self):
        spec = scaled_diffusion_field(0.5)
        part = make_partition(1.0, 3, 0.6)
        cp = concat_path(degree3_formula(1), part, (1, 2, 1))
        traj = solve_controlled_ode(spec.stratonovich(), cp, initial_state(v=np.ones(1)))
        assert np.max(np.abs(traj.values[:, 0] - traj.times)) <= 1e-12

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_non_finite_state(self):
        def mu(t, x):
            return x * x * 1e4  # super-linear blow-up

        def sig(t, x):
            return np.zeros((x.shape[0], 1, 1))

        fields = ito_to_stratonovich(mu, sig, 1, 1)
        with pytest.raises(NonFiniteState):
            solve_controlled_ode(
                fields, zero_path(), initial_state(v=np.array([10.0])), steps_per_segment=4
            )


class TestDegree3Exactness:
    def test_second_moment_of_brownian(self):
        # two leaves +-1 at T=1: sum lambda f(phi(1)) = 1 = E[B_1^2]
        spec = brownian_field(1.0)
        sq = PathFunctional("terminal_sq", None, lambda t, v: v[:, -1, 1] ** 2)
        rep = cubature_estimate(
            sq, spec.stratonovich(), degree3_formula(1), make_partition(1.0, 1, 1.0),
            None, x0=spec.x0,
        )
        assert rep.value == pytest.approx(1.0, abs=1e-12)

    def test_second_moment_k2_tree(self):
        # four-leaf tree: the weighted terminal second moment is still exact
        spec = brownian_field(1.0)
        sq = PathFunctional("terminal_sq", None, lambda t, v: v[:, -1, 1] ** 2)
        rep = cubature_estimate(
            sq, spec.stratonovich(), degree3_formula(1), make_partition(1.0, 2, 1.0),
            None, x0=spec.x0,
        )
        assert rep.n_paths == 4
        assert rep.value == pytest.approx(1.0, abs=1e-12)

    def test_linear_functional_exact_for_linear_fields(self):
        # dX = -0.5 X dt + 0.3 dB: E X_T = e^{-0.5 T} x0, met to solver error
        spec = make_field("ou", rate=0.5, mean=0.0, sigma=0.3, x0=1.0)
        term = PathFunctional("terminal", None, lambda t, v: v[:, -1, 1])
        rep = cubature_estimate(
            term, spec.stratonovich(), degree3_formula(1), make_partition(1.0, 2, 1.0),
            None, x0=spec.x0, steps_per_segment=64,
        )
        assert rep.value == pytest.approx(math.exp(-0.5), abs=1e-10)


class TestSolveSdeMc:
    def test_zero_sigma_is_deterministic(self):
        spec = drift_only_field(rate=1.0, d=1, x0=1.0)
        t1 = solve_sde_mc(spec.mu, spec.sigma, spec.x0, 1.0, 256, seed=1)
        t2 = solve_sde_mc(spec.mu, spec.sigma, spec.x0, 1.0, 256, seed=2)
        assert np.array_equal(t1.values, t2.values)
        assert t1.values[-1, 1] == pytest.approx(math.exp(-1.0), abs=5e-3)

    def test_seeded_reproducibility(self):
        spec = brownian_field(1.0)
        t1 = solve_sde_mc(spec.mu, spec.sigma, spec.x0, 1.0, 128, seed=77)
        t2 = solve_sde_mc(spec.mu, spec.sigma, spec.x0, 1.0, 128, seed=77)
        assert np.array_equal(t1.values, t2.values)

    def test_sample_moments(self):
        from sdecub.ode import solve_sde_mc_batch

        spec = brownian_field(1.0)
        rng = np.random.default_rng(123)
        _, paths = solve_sde_mc_batch(spec.mu, spec.sigma, spec.x0, 1.0, 64, rng, 100000)
        terminal = paths[:, -1, 0]
        assert abs(terminal.mean()) <= 4.0 / math.sqrt(100000)
        assert (terminal**2).mean() == pytest.approx(1.0, abs=0.02)

    def test_trajectory_starts_at_x0(self):
        spec = brownian_field(1.0, x0=0.4)
        traj = solve_sde_mc(spec.mu, spec.sigma, spec.x0, 1.0, 16, seed=5)
        assert traj.values[0, 1] == 0.4
        assert traj.values[0, 0] == 0.0

    def test_csv_export(self):
        spec = brownian_field(1.0)
        traj = solve_sde_mc(spec.mu, spec.sigma, spec.x0, 1.0, 4, seed=5)
        text = traj.to_csv()
        assert text.splitlines()[0] == "t,x_0"
        assert len(text.splitlines()) == 6


class TestInitialState:
    def test_identity_zeta_at_origin(self):
        out = initial_state(zeta=lambda v: v, v=np.zeros(1))
        assert out.tolist() == [0.0, 0.0]

    def test_default_v_is_zero(self):
        out = initial_state(zeta=lambda v: v + 1.0, d_x=1, d_v=1)
        assert out.tolist() == [0.0, 1.0]

    def test_constant_zeta(self):
        out = initial_state(zeta=lambda v: np.array([3.0]), v=np.array([9.0]))
        assert out.tolist() == [0.0, 3.0]

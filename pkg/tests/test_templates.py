import math

import numpy as np
import pytest

from rollstep.templates import (
    DS,
    LS,
    RS,
    ContactSchedule,
    PendulumParams,
    cart_lipm_matrices,
    lipm_propagate,
    lipm_transition,
    schedule_advance,
)


def rk4(f, y, t, dt):
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


class TestCartMatrices:
    def test_unit_omega_row(self):
        A, _ = cart_lipm_matrices(PendulumParams(z_c=9.81))
        np.testing.assert_allclose(A[1], [1.0, 0.0, -1.0, 0.0])

    def test_omega_squared_from_height(self):
        p = PendulumParams(z_c=0.8, g=9.81)
        A, _ = cart_lipm_matrices(p)
        assert A[1, 0] == pytest.approx(12.2625)
        assert A[1, 2] == pytest.approx(-12.2625)

    def test_input_vector(self):
        _, B = cart_lipm_matrices(PendulumParams(z_c=0.6))
        np.testing.assert_allclose(B, [0.0, 0.0, 0.0, 1.0])

    def test_recovers_pendulum_acceleration(self):
        # offset CoM, coincident velocities, zero input: xdd_c = omega^2 * delta
        p = PendulumParams(z_c=0.7)
        A, B = cart_lipm_matrices(p)
        delta = 0.03
        x = np.array([0.1 + delta, 0.0, 0.1, 0.0])
        xdot = A @ x + B * 0.0
        assert xdot[1] == pytest.approx(p.omega**2 * delta, rel=1e-12)


class TestTransition:
    def test_identity_at_zero(self):
        A, B = lipm_transition(PendulumParams(z_c=1.0), 0.0)
        np.testing.assert_allclose(A, np.eye(2))
        np.testing.assert_allclose(B, [0.0, 0.0])

    def test_log2_values(self):
        # omega = 1: cosh(ln 2) = 1.25, sinh(ln 2) = 0.75
        A, B = lipm_transition(PendulumParams(z_c=9.81), math.log(2.0))
        np.testing.assert_allclose(A, [[1.25, 0.75], [0.75, 1.25]], atol=1e-12)
        np.testing.assert_allclose(B, [-0.25, -0.75], atol=1e-12)

    def test_semigroup(self):
        p = PendulumParams(z_c=0.65)
        A1, _ = lipm_transition(p, 0.21)
        A2, _ = lipm_transition(p, 0.34)
        A12, _ = lipm_transition(p, 0.55)
        np.testing.assert_allclose(A1 @ A2, A12, atol=1e-12)

    def test_inverse_at_negative_time(self):
        p = PendulumParams(z_c=0.6)
        A, _ = lipm_transition(p, 0.4)
        Am, _ = lipm_transition(p, -0.4)
        np.testing.assert_allclose(A @ Am, np.eye(2), atol=1e-12)


class TestPropagate:
    def test_equilibrium_over_pivot(self):
        p = PendulumParams(z_c=0.6)
        for t in (0.0, 0.1, 1.0, 3.0):
            y = lipm_propagate([0.25, 0.0], 0.25, t, p)
            np.testing.assert_allclose(y, [0.25, 0.0], atol=1e-9)

    def test_against_rk4_oracle(self):
        p = PendulumParams(z_c=0.85)
        y_p = -0.12
        f = lambda t, y: np.array([y[1], p.omega**2 * (y[0] - y_p)])
        y = np.array([0.07, -0.3])
        t, dt = 0.0, 1e-4
        while t < 0.4 - 1e-12:
            y = rk4(f, y, t, dt)
            t += dt
        analytic = lipm_propagate([0.07, -0.3], y_p, 0.4, p)
        np.testing.assert_allclose(analytic, y, atol=1e-6)

    def test_unit_omega_log2(self):
        y = lipm_propagate([1.0, 0.0], 0.0, math.log(2.0), PendulumParams(z_c=9.81))
        np.testing.assert_allclose(y, [1.25, 0.75], atol=1e-12)

    def test_composition(self):
        p = PendulumParams(z_c=0.75)
        y0, y_p = np.array([0.02, 0.4]), 0.1
        via = lipm_propagate(lipm_propagate(y0, y_p, 0.13, p), y_p, 0.22, p)
        direct = lipm_propagate(y0, y_p, 0.35, p)
        np.testing.assert_allclose(via, direct, atol=1e-10)


class TestSchedule:
    def test_rolling_always_ds(self):
        s = ContactSchedule("rolling")
        for t in (0.0, 0.3, 5.0, 123.4):
            phase, T0 = schedule_advance(s, t)
            assert phase.kind == DS
            assert math.isinf(T0)

    def test_walking_mid_phase(self):
        s = ContactSchedule("walking", T_s=0.5, first_support=LS)
        phase, T0 = schedule_advance(s, 0.3)
        assert phase.kind == LS
        assert T0 == pytest.approx(0.2)

    def test_instant_switch_at_boundary(self):
        s = ContactSchedule("walking", T_s=0.5, first_support=LS)
        phase, T0 = schedule_advance(s, 0.5)
        assert phase.kind == RS
        assert T0 == pytest.approx(0.5)

    def test_switch_times_are_multiples_of_Ts(self):
        s = ContactSchedule("hybrid", T_s=0.4, first_support=RS, t_start=1.0)
        kinds = []
        ts = np.arange(1.0, 3.4, 0.01)
        for t in ts:
            kinds.append(schedule_advance(s, float(t))[0].kind)
        changes = [float(ts[i]) for i in range(1, len(ts)) if kinds[i] != kinds[i - 1]]
        for c in changes:
            frac = (c - 1.0) / 0.4
            assert abs(frac - round(frac)) < 0.011 / 0.4

    def test_lead_in_double_support(self):
        s = ContactSchedule("walking", T_s=0.5, lead_in_ds=0.2)
        assert schedule_advance(s, 0.1)[0].kind == DS
        phase, T0 = schedule_advance(s, 0.2)
        assert phase.kind == LS
        assert T0 == pytest.approx(0.5)

    def test_phases_list(self):
        s = ContactSchedule("walking", T_s=0.5)
        ph = s.phases(until=1.6)
        assert [p.kind for p in ph] == [LS, RS, LS, RS]

    def test_before_start_rejected(self):
        with pytest.raises(ValueError):
            schedule_advance(ContactSchedule("walking", t_start=2.0), 1.0)


class TestCartPropagate:
    def test_matches_matrix_exponential(self):
        import scipy.linalg

        from rollstep.templates import cart_lipm_propagate

        p = PendulumParams(z_c=0.62)
        A, B = cart_lipm_matrices(p)
        rng = np.random.default_rng(31)
        for _ in range(10):
            x = rng.standard_normal(4)
            u = rng.standard_normal()
            tau = rng.uniform(0.0, 0.6)
            M = np.zeros((5, 5))
            M[:4, :4] = A
            M[:4, 4] = B
            E = scipy.linalg.expm(M * tau)
            expected = E[:4, :4] @ x + E[:4, 4] * u
            got = cart_lipm_propagate(p, x, u, tau)
            np.testing.assert_allclose(got, expected, atol=1e-10)

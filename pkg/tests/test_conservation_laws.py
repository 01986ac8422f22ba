import numpy as np
import pytest

from ksvddg.conservation_laws import (GAMMA, PERIODIC_VELOCITY, VortexParameters, advection_law,
                                      euler_law, euler_vortex_case, exact_solution,
                                      periodic_euler3d_case, vortex_solution)
from ksvddg.errors import NonPhysicalStateError


def random_states(law, rng, n):
    """Admissible Euler states with O(1) velocities."""
    rho = rng.uniform(0.5, 2.0, n)
    vel = rng.uniform(-1.0, 1.0, (n, law.d))
    p = rng.uniform(0.5, 2.0, n)
    return law.conserved(rho, vel, p)


def random_normals(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestAdvection:
    def test_upwind_positive_speed(self):
        law = advection_law("a")
        out = law.numerical_flux(np.array([[2.0]]), np.array([[5.0]]), np.array([[1.0, 0.0]]),
                                 np.array([[0.3, 0.3]]))
        assert out[0, 0] == pytest.approx(2.0)

    def test_upwind_negative_speed_takes_exterior(self):
        law = advection_law("a")
        out = law.numerical_flux(np.array([[2.0]]), np.array([[5.0]]), np.array([[0.0, -1.0]]),
                                 np.array([[0.3, 0.3]]))
        assert out[0, 0] == pytest.approx(-10.0)

    def test_stagnation_point(self, rng):
        law = advection_law("b")
        x = np.full((10, 2), 0.5)
        np.testing.assert_array_equal(law.velocity(x), 0.0)
        out = law.numerical_flux(rng.standard_normal((10, 1)), rng.standard_normal((10, 1)),
                                 random_normals(rng, 10, 2), x)
        np.testing.assert_array_equal(out, 0.0)

    @pytest.mark.parametrize("fid", ["a", "b", "c"])
    def test_consistency(self, fid, rng):
        law = advection_law(fid)
        x = rng.uniform(0, 1, (100, 2))
        u = rng.standard_normal((100, 1))
        n = random_normals(rng, 100, 2)
        vn = np.sum(law.velocity(x) * n, axis=1, keepdims=True)
        np.testing.assert_allclose(law.numerical_flux(u, u, n, x), vn * u, atol=1e-14)

    @pytest.mark.parametrize("fid", ["a", "b", "c"])
    def test_trace_jacobians(self, fid, rng):
        law = advection_law(fid)
        x = rng.uniform(0, 1, (50, 2))
        n = random_normals(rng, 50, 2)
        dL, dR = law.numerical_flux_jacobians(None, None, n, x)
        vn = np.sum(law.velocity(x) * n, axis=1)
        np.testing.assert_allclose(dL[:, 0, 0], np.maximum(vn, 0))
        np.testing.assert_allclose(dL[:, 0, 0] + dR[:, 0, 0], vn, atol=1e-15)

    def test_field_formulas(self):
        x = np.array([[0.2, 0.9]])
        np.testing.assert_allclose(advection_law("a").velocity(x), [[1.0, 2.0]])
        np.testing.assert_allclose(advection_law("b").velocity(x), [[-0.3, -0.4]])
        np.testing.assert_allclose(advection_law("c").velocity(x), [[0.4, 0.3]])

    def test_rejects_unknown_field(self):
        with pytest.raises(ValueError):
            advection_law("z")
        with pytest.raises(ValueError):
            advection_law("c", 3)


class TestEuler:
    def test_uniform_state_flux(self):
        law = euler_law(2)
        u = law.conserved(np.array([1.0]), np.zeros((1, 2)), np.array([1.0]))
        assert u[0, -1] == pytest.approx(1.0 / 0.4)
        F = law.flux(u)
        np.testing.assert_allclose(F[0, :, 0], [0.0, 1.0, 0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(F[0, :, 1], [0.0, 0.0, 1.0, 0.0], atol=1e-15)

    @pytest.mark.parametrize("d", [2, 3])
    def test_flux_jacobian_vs_finite_differences(self, d, rng):
        law = euler_law(d)
        u = random_states(law, rng, 20)
        A = law.flux_jacobian(u)
        eps = 1e-5
        for c in range(law.nc):
            du = np.zeros(law.nc)
            du[c] = eps
            fd = (law.flux(u + du) - law.flux(u - du)) / (2 * eps)     # (n, nc, d)
            np.testing.assert_allclose(A[:, :, :, c], fd.transpose(0, 2, 1), atol=1e-6)

    @pytest.mark.parametrize("d", [2, 3])
    def test_numerical_flux_jacobians_vs_finite_differences(self, d, rng):
        law = euler_law(d)
        uL, uR = random_states(law, rng, 20), random_states(law, rng, 20)
        n = random_normals(rng, 20, d)
        dL, dR = law.numerical_flux_jacobians(uL, uR, n)
        eps = 1e-6
        for c in range(law.nc):
            du = np.zeros(law.nc)
            du[c] = eps
            fdL = (law.numerical_flux(uL + du, uR, n) - law.numerical_flux(uL - du, uR, n)) / (2 * eps)
            fdR = (law.numerical_flux(uL, uR + du, n) - law.numerical_flux(uL, uR - du, n)) / (2 * eps)
            np.testing.assert_allclose(dL[..., c], fdL, atol=1e-6)
            np.testing.assert_allclose(dR[..., c], fdR, atol=1e-6)

    @pytest.mark.parametrize("d", [2, 3])
    def test_numerical_flux_is_conservative(self, d, rng):
        law = euler_law(d)
        uL, uR = random_states(law, rng, 100), random_states(law, rng, 100)
        n = random_normals(rng, 100, d)
        np.testing.assert_allclose(law.numerical_flux(uL, uR, n), -law.numerical_flux(uR, uL, -n), atol=1e-12)

    def test_numerical_flux_consistency(self, rng):
        law = euler_law(3)
        u = random_states(law, rng, 50)
        n = random_normals(rng, 50, 3)
        np.testing.assert_allclose(law.numerical_flux(u, u, n), law.normal_flux(u, n, None), atol=1e-13)

    def test_lax_friedrichs_speed_bounds_both_traces(self, rng):
        law = euler_law(2)
        uL, uR = random_states(law, rng, 100), random_states(law, rng, 100)
        n = random_normals(rng, 100, 2)
        # recover lambda from a jump in a single component
        base = 0.5 * (law.normal_flux(uL, n, None) + law.normal_flux(uR, n, None))
        lam = (law.numerical_flux(uL, uR, n) - base)[:, 0] / (0.5 * (uL - uR)[:, 0])
        for u in (uL, uR):
            rho, vel, p = law.primitive(u)
            assert np.all(lam >= np.abs(np.sum(vel * n, axis=1)) + law.sound_speed(rho, p) - 1e-12)

    @pytest.mark.parametrize("d", [2, 3])
    def test_rotational_invariance(self, d, rng):
        law = euler_law(d)
        u = random_states(law, rng, 30)
        n = random_normals(rng, 30, d)
        # 90 degree rotation in the (0, 1) plane
        R = np.eye(d)
        R[:2, :2] = [[0.0, -1.0], [1.0, 0.0]]
        Q = np.eye(law.nc)
        Q[1:1 + d, 1:1 + d] = R
        lhs = law.normal_flux(u @ Q.T, n @ R.T, None)
        rhs = law.normal_flux(u, n, None) @ Q.T
        np.testing.assert_allclose(lhs, rhs, atol=1e-13)

    def test_nonphysical_state_reports_location(self):
        law = euler_law(2)
        u = law.conserved(np.ones(4), np.zeros((4, 2)), np.ones(4))
        u[2, 0] = -1.0
        with pytest.raises(NonPhysicalStateError) as info:
            law.flux(u)
        assert info.value.location == (2,)

    def test_rejects_bad_dimension(self):
        with pytest.raises(ValueError):
            euler_law(1)


class TestExactSolutions:
    def test_periodic_origin(self):
        case = periodic_euler3d_case(2)
        u = exact_solution(case, np.zeros((1, 3)), 0.0)
        rho, vel, p = case.law.primitive(u)
        assert rho[0] == pytest.approx(1.0)
        assert p[0] == pytest.approx(1.0)
        np.testing.assert_allclose(vel[0], [1.0, -0.5, 1.0])
        assert tuple(PERIODIC_VELOCITY) == (1.0, -0.5, 1.0)

    def test_periodic_in_time(self, rng):
        case = periodic_euler3d_case(2)
        x = rng.uniform(0, 2, (50, 3))
        t = 2.0 / 1.5
        np.testing.assert_allclose(exact_solution(case, x, t), exact_solution(case, x, 0.0), atol=1e-13)

    def test_periodic_in_space(self, rng):
        case = periodic_euler3d_case(2)
        x = rng.uniform(0, 2, (50, 3))
        shift = np.array([2.0, 0.0, 0.0])
        np.testing.assert_allclose(exact_solution(case, x + shift, 0.3), exact_solution(case, x, 0.3), atol=1e-13)

    def test_vortex_center(self):
        prm = VortexParameters()
        u = vortex_solution(np.array([[prm.x0, prm.y0]]), 0.0, prm)
        # plug-in evaluation: f = 1/rc^2 at the center, velocity deviation vanishes
        g, M, eps = GAMMA, prm.mach, prm.eps
        f = 1.0 / prm.rc ** 2
        rho = (1.0 - eps ** 2 * (g - 1) * M ** 2 / (8 * np.pi ** 2) * np.exp(f)) ** (1 / (g - 1))
        assert u[0, 0] == pytest.approx(rho, rel=1e-14)
        np.testing.assert_allclose(u[0, 1:3] / u[0, 0], [np.cos(prm.theta), np.sin(prm.theta)], rtol=1e-14)

    def test_vortex_unit_radius_gives_f_one(self):
        prm = VortexParameters(rc=1.0)
        u = vortex_solution(np.array([[prm.x0, prm.y0]]), 0.0, prm)
        g, M, eps = GAMMA, prm.mach, prm.eps
        expected = (1.0 - eps ** 2 * (g - 1) * M ** 2 / (8 * np.pi ** 2) * np.e) ** (1 / (g - 1))
        assert u[0, 0] == pytest.approx(expected, rel=1e-14)

    def test_vortex_is_isentropic_and_translates(self, rng):
        prm = VortexParameters()
        law = euler_law(2)
        x = rng.uniform(2, 8, (40, 2))
        rho, vel, p = law.primitive(vortex_solution(x, 0.0, prm))
        np.testing.assert_allclose(p / rho ** GAMMA, prm.p_inf / prm.rho_inf ** GAMMA, rtol=1e-13)
        t = 0.7
        shift = t * prm.u_inf * np.array([np.cos(prm.theta), np.sin(prm.theta)])
        np.testing.assert_allclose(vortex_solution(x + shift, t, prm), vortex_solution(x, 0.0, prm), atol=1e-13)

    def test_vortex_far_field(self):
        prm = VortexParameters()
        u = vortex_solution(np.array([[100.0, -80.0]]), 0.0, prm)
        rho, vel, p = euler_law(2).primitive(u)
        assert rho[0] == pytest.approx(1.0, abs=1e-12)
        assert p[0] == pytest.approx(1.0 / (GAMMA * 0.25), rel=1e-12)

    def test_no_exact_solution_for_advection(self):
        from ksvddg.conservation_laws import advection_case
        with pytest.raises(ValueError):
            exact_solution(advection_case("a"), np.zeros((1, 2)), 0.0)

    def test_vortex_case_boundary_data_is_exact(self, rng):
        case = euler_vortex_case()
        x = rng.uniform(0, 20, (10, 2))
        np.testing.assert_allclose(case.exterior(x, 0.3), case.exact(x, 0.3))

import numpy as np
import pytest

from shellvk.errors import InputError, SolverError, StateError
from shellvk.fields import NormalProfile, TimeModulated, VectorProfile
from shellvk.geometry import Chart, build_mesh
from shellvk.material import MaterialModel
from shellvk.solver3d import (MIDPOINT, Forcing, ScalingLaw, ShellProblem, State3D,
                              assemble_residual, energy, finite_difference_tangent, hgradient,
                              init_state, state_from_arrays, step, total_energy)

H0 = 0.1


def make_problem(chart, n=3, ns=2, order=2, h=0.05, **kw):
    mesh = build_mesh(chart, n, n, ns, H0, order=order)
    return ShellProblem(mesh, MaterialModel(1.0, 1.0), ScalingLaw(h, **kw))


def _exact_rescaled_gradient(mesh, h, h2):
    """grad_h of y = x + (s h2/h0) n against the rest map x + (s h/h0) n."""
    geo = mesh.qp_geometry
    s = mesh.qp_param[..., 2].reshape(-1)
    I = np.eye(3)
    a = (s * h / H0)[:, None, None]
    b = (s * h2 / H0)[:, None, None]
    nn = np.einsum("pi,pj->pij", geo.n, geo.n)
    return (I + b * geo.Pi) @ np.linalg.inv(I + a * geo.Pi) + (h2 / h - 1) * nn


def test_scaling_law():
    law = ScalingLaw(0.05, kappa=2.0)
    assert law.e_h / 0.05**4 == pytest.approx(2.0, rel=1e-14)
    assert law.amplitude == pytest.approx(np.sqrt(law.e_h) / 0.05)
    sub = [ScalingLaw(h, rule="sub_h4", beta=5) for h in (0.1, 0.05, 0.025)]
    ratios = [s.e_h / s.h**4 for s in sub]
    assert ratios[0] > ratios[1] > ratios[2] and sub[0].limit_kappa == 0.0
    for bad in (dict(h=0.0), dict(h=0.1, kappa=0.0), dict(h=0.1, rule="sub_h4", beta=4.0),
                dict(h=0.1, rule="other")):
        with pytest.raises(ValueError):
            ScalingLaw(**bad)


def test_h_above_h0_rejected():
    mesh = build_mesh(Chart.plate(), 2, 2, 1, H0)
    with pytest.raises(ValueError):
        ShellProblem(mesh, MaterialModel(), ScalingLaw(0.2))


def test_rest_gradient_is_identity(chart):
    p = make_problem(chart)
    state = State3D(p, np.zeros((p.n_nodes, 3)), np.zeros((p.n_nodes, 3)))
    assert np.abs(p.hgrad(state.u)).max() == 0.0
    assert np.allclose(hgradient(state, 0, 0), np.eye(3), atol=0)


def test_plate_gradient_scales_normal_column():
    p = make_problem(Chart.plate(), n=2, order=1, h=0.05)
    mesh = p.mesh
    xi, s = mesh.node_xi, mesh.node_s
    A = np.array([[0.1, 0.2], [-0.3, 0.05], [0.4, 0.0]])
    c = np.array([0.2, -0.1, 0.3])
    u = xi @ A.T + s[:, None] * c
    G = p.hgrad(u)
    assert np.allclose(G[..., :2], A, atol=1e-13)
    assert np.allclose(G[..., 2], (H0 / 0.05) * c, atol=1e-13)


def test_curved_gradient_converges():
    errs = []
    for n in (4, 8, 16):
        mesh = build_mesh(Chart.sphere(), n, n, 1, H0, order=2)
        p = ShellProblem(mesh, MaterialModel(), ScalingLaw(0.05))
        u = mesh.rest_positions(0.04) - mesh.rest_positions(0.05)
        got = (np.eye(3) + p.hgrad(u)).reshape(-1, 3, 3)
        errs.append(np.abs(got - _exact_rescaled_gradient(mesh, 0.05, 0.04)).max())
    assert np.log2(errs[1] / errs[2]) >= 1.9


def test_rest_residual_vanishes(chart):
    p = make_problem(chart)
    state = state_from_arrays(p, np.zeros((p.n_nodes, 3)))
    assert np.abs(assemble_residual(state)).max() <= 1e-12
    kin, el = energy(state)
    assert kin == 0.0 and el == 0.0


def test_residual_is_energy_derivative(chart, rng):
    p = make_problem(chart, h=0.05)
    u = 0.02 * rng.standard_normal((p.n_nodes, 3))
    u[p.fixed.reshape(-1, 3)] = 0.0
    d = rng.standard_normal((p.n_nodes, 3))
    d[p.fixed.reshape(-1, 3)] = 0.0
    state = state_from_arrays(p, u)
    R = assemble_residual(state).ravel()
    def fd(eps):
        return (p.elastic_energy(u + eps * d) - p.elastic_energy(u - eps * d)) / (2 * eps)

    # the energy is quartic in u, so one Richardson step removes the whole error
    assert R @ d.ravel() == pytest.approx((4 * fd(5e-4) - fd(1e-3)) / 3, rel=1e-6)


def test_residual_linear_in_small_perturbation(rng):
    p = make_problem(Chart.sphere())
    d = rng.standard_normal((p.n_nodes, 3))
    d[p.fixed.reshape(-1, 3)] = 0.0
    def defect(e):
        # R(2e) - 2R(e) vanishes for a residual linear in e
        r1, r2 = (assemble_residual(state_from_arrays(p, k * e * d)) for k in (1, 2))
        return np.abs(r2 - 2 * r1).max()

    assert defect(1e-4) / defect(5e-5) == pytest.approx(4.0, rel=0.05)


def test_stiffness_matches_finite_differences(rng):
    p = make_problem(Chart.cylinder(), n=2)
    u = 0.01 * rng.standard_normal((p.n_nodes, 3))
    K = p.stiffness(u).toarray()
    fd = finite_difference_tangent(p, u)
    assert np.abs(K - fd).max() <= 1e-5 * np.abs(K).max()


def test_acceleration_enters_residual(rng):
    p = make_problem(Chart.plate(), n=2)
    state = state_from_arrays(p, np.zeros((p.n_nodes, 3)))
    a = np.zeros((p.n_nodes, 3))
    a[~p.fixed.reshape(-1, 3)] = 1.0
    R = assemble_residual(state, acceleration=a)
    free = ~p.fixed.reshape(-1, 3)
    assert np.allclose(R[free], (p.h**2 * (p.mass @ a.ravel())).reshape(-1, 3)[free])


def test_boundary_violation_is_state_error():
    p = make_problem(Chart.plate(), n=2)
    u = np.zeros((p.n_nodes, 3))
    u[p.fixed.reshape(-1, 3)[:, 0].nonzero()[0][0]] = 1e-3
    with pytest.raises(StateError):
        state_from_arrays(p, u)


def test_init_zero_is_rest():
    p = make_problem(Chart.plate(), n=2)
    s = init_state(p)
    assert total_energy(s) == 0.0 and np.all(s.u == 0) and np.all(s.v == 0)


def test_init_boundary_incompatible_field():
    p = make_problem(Chart.plate(), n=2)
    with pytest.raises(InputError):
        init_state(p, displacement=VectorProfile("sine", (1.0, 0.0, 0.0)) and _Constant())
    with pytest.raises(ValueError):
        init_state(p, lift="other")


class _Constant:
    def evaluate(self, geo, chart):
        return np.ones_like(geo.x), np.zeros(geo.x.shape + (2,))


def test_velocity_only_kinetic_energy():
    # plate: kinetic energy / e_h = 1/2 int |what|^2 with what = phi e3, phi = sin^2 sin^2
    p = make_problem(Chart.plate(), n=8, ns=1, h=0.05)
    s = init_state(p, velocity=NormalProfile("bubble"))
    exact = 0.5 * (3 / 8) ** 2
    assert energy(s)[0] / p.scaling.e_h == pytest.approx(exact, rel=1e-2)


def test_bending_data_energy_bounded_across_h():
    ratios = []
    for h in (0.1, 0.05, 0.025):
        p = make_problem(Chart.plate(), n=4, ns=2, h=h)
        s = init_state(p, displacement=NormalProfile("bubble"))
        ratios.append(total_energy(s) / p.scaling.e_h)
    assert max(ratios) / min(ratios) < 1.5


def test_rest_state_is_equilibrium():
    p = make_problem(Chart.sphere(), n=2)
    s = init_state(p)
    for dt in (1e-3, 0.1):
        out = step(s, dt)
        assert np.abs(out.u).max() <= 1e-12 and np.abs(out.v).max() <= 1e-12
        assert out.t == pytest.approx(dt)


@pytest.mark.parametrize("scheme", ["avf", MIDPOINT])
def test_unforced_energy_conservation(scheme):
    p = make_problem(Chart.plate(), n=3, h=0.05)
    s = init_state(p, velocity=NormalProfile("bubble", 2.0))
    e0 = total_energy(s)
    worst = 0.0
    for _ in range(100):
        s = step(s, 2e-3, scheme=scheme)
        worst = max(worst, abs(total_energy(s) - e0) / e0)
    assert worst <= (1e-8 if scheme == "avf" else 1e-3)


def test_forced_energy_inequality():
    p = make_problem(Chart.cylinder(), n=3, h=0.05)
    force = Forcing(TimeModulated(NormalProfile("bubble", 5.0), "cos", 10.0))
    s = init_state(p, displacement=NormalProfile("bubble"))
    tol = 1e-8 * total_energy(s)
    for _ in range(20):
        s = step(s, 1e-3, force, tol_energy=tol)
        assert s.info["slack"] <= tol and not s.info["energy_violation"]


def test_midpoint_drift_is_second_order():
    p = make_problem(Chart.plate(), n=2, h=0.05)
    s0 = init_state(p, velocity=NormalProfile("bubble", 4.0))
    e0 = total_energy(s0)
    drift = []
    for dt in (4e-3, 2e-3):
        s = s0
        for _ in range(int(round(0.04 / dt))):
            s = step(s, dt, scheme=MIDPOINT)
        drift.append(abs(total_energy(s) - e0) / e0)
    assert drift[0] / drift[1] == pytest.approx(4.0, rel=0.35)


def test_zero_mean_forcing_check():
    chart = Chart.plate()
    Forcing(NormalProfile("antisym"), zero_mean=True).check_zero_mean(chart, [0.0])
    with pytest.raises(InputError):
        Forcing(NormalProfile("bubble"), zero_mean=True).check_zero_mean(chart, [0.0])


def test_invalid_step_arguments():
    s = init_state(make_problem(Chart.plate(), n=2))
    with pytest.raises(ValueError):
        step(s, 0.0)
    with pytest.raises(ValueError):
        step(s, 1e-3, scheme="rk4")


def test_large_deformation_raises_solver_error():
    p = make_problem(Chart.plate(), n=2, h=0.05)
    s = init_state(p, velocity=NormalProfile("bubble", 1e6))
    with pytest.raises(SolverError) as info:
        step(s, 1e-2, max_halvings=1)
    assert info.value.diagnostics

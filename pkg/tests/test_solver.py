import numpy as np
import pytest

import nlforce.solver as solver
from nlforce.grid import Grid
from nlforce.media import InadmissibleError, builtin_law
from nlforce.solver import (BoundaryCondition, ConvergenceError, RadialPotential, build_discretization, energy,
                            residual_norm, solve_1d, solve_grid, solve_radial)
from nlforce.sources import ChargeConfiguration, PointCharge, RadialProfile, SphereBody
from tests.conftest import LAW_SPECS


def _sphere_cfg(D, q=0.3, R=0.6, c=None):
    c = c or (0.05,) * D
    return ChargeConfiguration(D, [SphereBody("s", c, RadialProfile.with_charge("bump", q, R, D))])


def _small_q(law, q, R):
    # keep a ball of radius R below the saturation ceiling of nu
    sup = law.nu_sup()
    return q if not np.isfinite(sup) else min(q, 0.2 * sup * law.a0 * R ** (law.D - 1) / abs(law.G))


@pytest.mark.parametrize("kind,params", [("power", {"beta": 1.0}), ("mond-simple", {}), ("born-infeld", {})])
def test_gradient_and_hessian_match_finite_differences(kind, params, rng):
    law = builtin_law(kind, params, D=2)
    cfg = _sphere_cfg(2, _small_q(law, 0.3, 0.6))
    grid = Grid.from_box((-1.5, -1.5), (1.5, 1.5), (12, 12))
    disc = build_discretization(law, cfg, BoundaryCondition(), grid)
    rho = cfg.density_on(grid)
    phi = 0.01 * rng.standard_normal(grid.N)
    assert np.isfinite(disc.J(phi, rho))
    v = rng.standard_normal(grid.N)
    eps = 1e-6
    fd = (disc.J(phi + eps * v, rho) - disc.J(phi - eps * v, rho)) / (2 * eps)
    assert disc.gradient(phi, rho) @ v == pytest.approx(fd, rel=1e-6)
    if law.beta0 == 0:
        H = disc.hessian_operator(disc.face_gradients(phi))
        fdh = (disc.gradient(phi + eps * v, rho) - disc.gradient(phi - eps * v, rho)) / (2 * eps)
        np.testing.assert_allclose(H @ v, fdh, rtol=1e-5, atol=1e-7 * np.abs(fdh).max())


@pytest.mark.parametrize("law_spec", LAW_SPECS, ids=lambda s: s[0] + str(s[1].get("beta", s[1].get("gamma", ""))))
@pytest.mark.parametrize("D", [2, 3])
def test_vacuum_uniform_field_is_exact(law_spec, D):
    law = builtin_law(law_spec[0], law_spec[1], D=D)
    w0 = 0.5 * min(1.0, law.w_max or 1.0)
    g0 = tuple(law.a0 * w0 * np.linspace(1.0, 0.5, D) / np.linalg.norm(np.linspace(1.0, 0.5, D)))
    grid = Grid.from_box((-1.0,) * D, (1.0,) * D, (8,) * D)
    sol = solve_grid(law, None, BoundaryCondition(kind="uniform-gradient", g0=g0), grid, tol=1e-12)
    np.testing.assert_allclose(sol.phi.ravel(), -grid.points() @ np.asarray(g0), atol=1e-12)


@pytest.fixture(scope="module")
def power_solution():
    law = builtin_law("power", {"beta": 1.0}, D=2)
    cfg = ChargeConfiguration(2, [SphereBody("a", (-0.6, 0.1), RadialProfile.with_charge("bump", 1.0, 0.5, 2)),
                                  SphereBody("b", (0.7, -0.2), RadialProfile.with_charge("parabolic", -0.5, 0.4, 2))])
    grid = Grid.from_box((-2.5, -2.5), (2.5, 2.5), (60, 60))
    return law, cfg, grid, solve_grid(law, cfg, BoundaryCondition(), grid, tol=1e-11)


def test_solution_is_unique_from_any_start(power_solution):
    law, cfg, grid, ref = power_solution
    scale = np.abs(ref.phi).max()
    for initial in ("zero", ("random", 1), ("random", 2)):
        sol = solve_grid(law, cfg, BoundaryCondition(), grid, tol=1e-11, initial=initial)
        assert np.abs(sol.phi - ref.phi).max() < 1e-8 * scale


def test_newton_energy_is_monotone(power_solution):
    hist = power_solution[3].energy_history
    assert len(hist) >= 2
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(hist, hist[1:]))
    assert residual_norm(power_solution[3]) < 1e-11


def test_hessian_floor_only_changes_the_path(power_solution, monkeypatch):
    law, cfg, grid, ref = power_solution
    monkeypatch.setattr(solver, "HESSIAN_W_FLOOR", solver.HESSIAN_W_FLOOR / 2)
    sol = solve_grid(law, cfg, BoundaryCondition(), grid, tol=1e-11)
    assert np.abs(sol.phi - ref.phi).max() < 1e-8 * np.abs(ref.phi).max()


@pytest.mark.parametrize("kind,params,ratio", [("power", {"beta": 1.0}, 2.5), ("mond-simple", {}, 2.5),
                                               ("linear", {}, 3.5)])
def test_grid_matches_radial_solution_at_second_order(kind, params, ratio):
    # mu(0) = 0 makes phi ~ r^(3/2) at the centre of the ball: order 1.5 there
    law = builtin_law(kind, params, D=2)
    prof = RadialProfile.with_charge("bump", 0.8, 1.0, 2)
    errs = []
    for n in (32, 64):
        grid = Grid.from_box((-2.0, -2.0), (2.0, 2.0), (n, n))
        cfg = ChargeConfiguration(2, [SphereBody("s", (0.0, 0.0), prof)])
        sol = solve_grid(law, cfg, BoundaryCondition(), grid, tol=1e-12)
        r = np.linalg.norm(grid.points(), axis=1)
        order = np.argsort(r)
        exact = np.empty_like(r)
        exact[order] = solve_radial(law, prof, r[order] + 1e-12 * np.arange(len(r))).phi
        errs.append(np.abs(sol.phi.ravel() - exact).max())
    assert errs[1] < errs[0] / ratio


def test_grid_1d_matches_exact_line_solution():
    law = builtin_law("power", {"beta": 1.0}, D=1)
    charges = [(-1.0, 0.3), (0.5, 0.5), (1.5, -0.2)]
    cfg = ChargeConfiguration(1, [PointCharge(f"c{i}", q, (x,), 0.2) for i, (x, q) in enumerate(charges)])
    grid = Grid.from_box((-4.0,), (4.0,), (320,))
    sol = solve_grid(law, cfg, BoundaryCondition(), grid, tol=1e-12)
    exact = solve_1d(law, charges)
    x = grid.points()[:, 0]
    slope = np.gradient(sol.phi, x)
    for (xa, xb), s in zip([(-4, -1), (-1, 0.5), (0.5, 1.5), (1.5, 4)], exact.slope):
        m = (x > xa + 0.3) & (x < xb - 0.3)
        # the middle segment carries zero flux; sqrt of round-off is ~1e-8
        np.testing.assert_allclose(slope[m], s, rtol=1e-6, atol=1e-7)


def test_convergence_error_carries_last_iterate(power_solution):
    law, cfg, grid, _ = power_solution
    with pytest.raises(ConvergenceError) as err:
        solve_grid(law, cfg, BoundaryCondition(), grid, tol=1e-14, max_iter=1)
    assert err.value.solution.iterations == 1 and not err.value.solution.converged


def test_inadmissible_configurations():
    grid = Grid.from_box((-2, -2), (2, 2), (32, 32))
    pc = ChargeConfiguration(2, [PointCharge("p", 1.0, (0.0, 0.0), 0.5)])
    with pytest.raises(InadmissibleError, match="point-charge"):
        solve_grid(builtin_law("area-min", D=2), pc, BoundaryCondition(), grid)
    with pytest.raises(InadmissibleError, match="saturation"):
        solve_grid(builtin_law("area-min", D=2), _sphere_cfg(2, 2.0), BoundaryCondition(), grid)
    with pytest.raises(InadmissibleError, match="saturation"):
        solve_radial(builtin_law("area-min", D=3), RadialProfile.with_charge("uniform", 10.0, 0.5, 3),
                     np.linspace(0.01, 2, 50))


def test_input_validation():
    grid = Grid.from_box((-2, -2), (2, 2), (16, 16))
    law = builtin_law("linear", D=2)
    with pytest.raises(ValueError, match="fewer than 4 cells"):
        solve_grid(law, ChargeConfiguration(2, [PointCharge("p", 1.0, (0.0, 0.0), 0.3)]), BoundaryCondition(), grid)
    with pytest.raises(ValueError, match="dimension"):
        solve_grid(law, _sphere_cfg(3), BoundaryCondition(), grid)
    with pytest.raises(ValueError):
        BoundaryCondition(kind="robin")
    with pytest.raises(ValueError):
        BoundaryCondition(kind="uniform-gradient")
    with pytest.raises(ValueError):
        solve_1d(law, [(0.0, 1.0)])
    with pytest.raises(ValueError, match="distinct"):
        solve_1d(builtin_law("linear", D=1), [(0.0, 1.0), (0.0, 2.0)])


def test_energy_report_consistency():
    law = builtin_law("mond-simple", D=2)
    cfg = _sphere_cfg(2, 0.5)
    sol = solve_grid(law, cfg, BoundaryCondition(kind="dirichlet-box", values=0.0),
                     Grid.from_box((-2, -2), (2, 2), (48, 48)), tol=1e-11)
    rep = energy(sol)
    assert rep.discrepancy < 1e-8 and rep.extremum == "minimum" and not rep.divergent
    bi = solve_grid(builtin_law("born-infeld", D=2), _sphere_cfg(2, 0.2), BoundaryCondition(kind="dirichlet-box", values=0.0),
                    Grid.from_box((-2, -2), (2, 2), (32, 32)), tol=1e-11)
    assert energy(bi).extremum == "maximum" and energy(bi).discrepancy < 1e-8


@pytest.mark.parametrize("kind,params,D", [("linear", {}, 3), ("power", {"beta": 1.0}, 3), ("mond-simple", {}, 2)])
def test_radial_potential_derivative(kind, params, D):
    law = builtin_law(kind, params, D=D)
    pot = RadialPotential(law, 2.0, 0.1, 20.0)
    r = np.array([0.5, 1.0, 4.0])
    h = 1e-4
    np.testing.assert_allclose((pot(r + h) - pot(r - h)) / (2 * h), pot.g(r), rtol=1e-6)
    if pot.convergent:
        assert abs(pot(np.array([19.9]))[0]) < abs(pot(np.array([1.0]))[0])


def test_unfold_doubles_mirrored_axes(power_solution):
    law = builtin_law("linear", D=2)
    cfg = ChargeConfiguration(2, [SphereBody("s", (0.5, 0.0), RadialProfile.with_charge("bump", 1.0, 0.3, 2))])
    half = solve_grid(law, cfg, BoundaryCondition(mirrors=(("odd", None), (None, None))),
                      Grid.from_box((0, -2), (2, 2), (32, 64)), tol=1e-11)
    full = half.unfold()
    assert full.grid.n == (64, 64) and full.grid.lo == (-2.0, -2.0)
    np.testing.assert_allclose(full.phi[:32], -np.flip(half.phi, 0))
    assert half.symmetry_factor == 2


def test_born_infeld_near_ceiling_converges():
    # without the gap rule Newton overshoots to w ~ 1 - 4e-7 and stalls there
    law = builtin_law("born-infeld", D=2, G=-1.0)
    a, b = np.array([0.18932512, 0.70106686]), np.array([-0.18932512, -0.70106686])
    cfg = ChargeConfiguration(2, [SphereBody("a", tuple(a), RadialProfile.with_charge("bump", 1.8200419465651394, 0.3153, 2)),
                                  SphereBody("b", tuple(b), RadialProfile.with_charge("bump", 0.6901870305169031, 0.4433, 2))])
    sol = solve_grid(law, cfg, BoundaryCondition(), Grid.from_box((-3, -3), (3, 3), (96, 96)), tol=1e-8)
    w = sol.disc.face_w(sol.disc.face_gradients(sol.phi.ravel()))
    assert sol.converged and 0.99 < w.max() < 1.0


def test_step_keeps_gap_to_ceiling():
    law = builtin_law("born-infeld", D=2)
    disc = build_discretization(law, None, BoundaryCondition(), Grid.from_box((-1, -1), (1, 1), (4, 4)))
    w_old = np.full(disc.nf, 0.8)
    assert disc.keeps_gap(np.full(disc.nf, 0.97), w_old)
    assert not disc.keeps_gap(np.full(disc.nf, 0.99), w_old)
    assert not disc.keeps_gap(np.full(disc.nf, 50.0), w_old)

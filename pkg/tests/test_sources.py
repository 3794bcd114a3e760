import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from nlforce.grid import Grid
from nlforce.media import alpha_D, builtin_law
from nlforce.solver import BoundaryCondition, solve_grid
from nlforce.sources import (Box, ChargeConfiguration, ConfigError, DensityField, DirichletBody, MediumInclusion,
                             NeumannBody, PointCharge, RadialProfile, Sphere, SphereBody, bump_norm,
                             effective_charge_density, read_density_file, sample_body, scale_configuration,
                             total_charge, write_array_file)


@pytest.mark.parametrize("kind", ["uniform", "parabolic", "bump"])
@pytest.mark.parametrize("D", [1, 2, 3, 4])
def test_profile_enclosed_matches_quadrature(kind, D):
    p = RadialProfile(kind, 1.7, 0.8)
    for r in (0.2, 0.5, 0.8, 2.0):
        num = integrate.quad(lambda s: alpha_D(D) * s ** (D - 1) * float(p(s)), 0, min(r, p.R))[0]
        assert p.enclosed(r, D) == pytest.approx(num, rel=1e-10)
    assert p.enclosed(5.0, D) == pytest.approx(p.total(D), rel=1e-12)


@given(D=st.integers(1, 4), q=st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3), R=st.floats(0.1, 5))
def test_with_charge_gives_requested_total(D, q, R):
    for kind in ("uniform", "parabolic", "bump"):
        assert RadialProfile.with_charge(kind, q, R, D).total(D) == pytest.approx(q, rel=1e-12)


@pytest.mark.parametrize("D", [1, 2, 3])
def test_bump_norm(D):
    assert RadialProfile("bump", 1.0, 1.0).shape_integral(D) * bump_norm(D) == pytest.approx(1.0)


def test_profiles_are_nonincreasing():
    r = np.linspace(0, 1.5, 301)
    for kind in ("uniform", "parabolic", "bump"):
        v = RadialProfile(kind, 2.0, 1.0)(r)
        assert np.all(np.diff(v) <= 1e-15)
    with pytest.raises(ValueError):
        RadialProfile("gauss", 1.0, 1.0)


@pytest.mark.parametrize("D", [1, 2, 3])
def test_sampled_charge_is_exact(D):
    g = Grid.from_box((-1.0,) * D, (1.0,) * D, (20,) * D)
    pc = PointCharge("a", 2.5, (0.13,) * D, 0.4)
    assert sample_body(pc, g, D).sum() * g.cell_volume == pytest.approx(2.5, rel=1e-12)


def test_sampling_keeps_mirror_share():
    # a charge centred on the low face of the box keeps half its charge
    g = Grid.from_box((0.0, -1.0), (1.0, 1.0), (16, 32))
    pc = PointCharge("a", 1.0, (0.0, 0.0), 0.3)
    assert sample_body(pc, g, 2).sum() * g.cell_volume == pytest.approx(0.5, rel=1e-12)


def test_configuration_validation():
    a = PointCharge("a", 1.0, (0.0, 0.0), 0.3)
    with pytest.raises(ConfigError, match="duplicate"):
        ChargeConfiguration(2, [a, PointCharge("a", 1.0, (2.0, 0.0), 0.3)])
    with pytest.raises(ConfigError) as err:
        ChargeConfiguration(2, [a, PointCharge("b", 1.0, (0.5, 0.0), 0.3)])
    assert err.value.path == "bodies[1]"
    with pytest.raises(ConfigError, match="dimension"):
        ChargeConfiguration(3, [a])
    with pytest.raises(ConfigError, match="width"):
        ChargeConfiguration(2, [PointCharge("z", 1.0, (0.0, 0.0), 0.0)])
    # spheres whose boxes overlap but whose balls do not are fine
    ChargeConfiguration(2, [a, PointCharge("c", 1.0, (0.45, 0.45), 0.3)])
    with pytest.raises(ConfigError):
        ChargeConfiguration(2, [a, NeumannBody("n", Box((0.2, -1.0), (1.0, 1.0)))])


def test_configuration_totals_and_centroid():
    cfg = ChargeConfiguration(2, [PointCharge("a", 3.0, (1.0, 0.0), 0.2),
                                  PointCharge("b", 1.0, (-1.0, 0.0), 0.2),
                                  NeumannBody("n", Sphere((0.0, 3.0), 0.5))])
    assert cfg.total_charge() == 4.0 and cfg.abs_charge() == 4.0
    np.testing.assert_allclose(cfg.centroid(), [0.5, 0.0])
    dip = ChargeConfiguration(2, [PointCharge("a", 1.0, (1.0, 0.0), 0.2), PointCharge("b", -1.0, (-1.0, 2.0), 0.2)])
    np.testing.assert_allclose(dip.centroid(), [0.0, 1.0])
    assert [b.id for b in cfg.sources] == ["a", "b"]
    with pytest.raises(KeyError):
        cfg.body("zz")


def test_sphere_body_and_density_field():
    s = SphereBody("s", (0.0, 0.0, 0.0), RadialProfile.with_charge("parabolic", 2.0, 0.5, 3))
    assert s.total_charge(3) == pytest.approx(2.0)
    vals = np.arange(6.0).reshape(2, 3)
    f = DensityField("f", vals, (0.0, 0.0), (0.5, 0.25))
    assert f.total_charge(2) == pytest.approx(vals.sum() * 0.125)
    np.testing.assert_allclose(f.density(np.array([[0.2, 0.6], [0.9, 0.1], [5.0, 5.0]]), 2), [2.0, 3.0, 0.0])


def test_array_file_round_trip(tmp_path, rng):
    a = rng.standard_normal((3, 4, 5))
    p = tmp_path / "a.txt"
    write_array_file(p, a, comment="scenario abc\nsecond line")
    assert p.read_text().startswith("# scenario abc\n# second line\n3 4 5\n")
    np.testing.assert_array_equal(read_density_file(p), a)
    p.write_text("2 2\n1 2 3\n")
    with pytest.raises(ValueError, match="do not match"):
        read_density_file(p)


def test_boundary_body_charges():
    law = builtin_law("linear", D=2)
    n = NeumannBody("n", Sphere((0.0, 0.0), 0.5))
    inc = MediumInclusion("i", Box((0.0, 0.0), (1.0, 1.0)), law)
    assert total_charge(n, 2) == 0.0 and total_charge(inc, 2) == 0.0
    with pytest.raises(ValueError, match="pass a solution"):
        total_charge(DirichletBody("d", Sphere((0.0, 0.0), 0.5), 1.0), 2)


@pytest.fixture(scope="module")
def sphere_solution():
    law = builtin_law("power", {"beta": 1.0}, D=2)
    cfg = ChargeConfiguration(2, [SphereBody("s", (0.1, -0.2), RadialProfile.with_charge("bump", 1.0, 0.6, 2))])
    return solve_grid(law, cfg, BoundaryCondition(), Grid.from_box((-2, -2), (2, 2), (48, 48)), tol=1e-10)


def test_effective_density_recovers_sources(sphere_solution):
    eff = effective_charge_density(sphere_solution)
    scale = np.abs(sphere_solution.rho).max()
    assert np.abs(eff - sphere_solution.rho).max() < 1e-6 * scale


def test_effective_density_of_a_conductor():
    law = builtin_law("linear", D=2)
    cfg = ChargeConfiguration(2, [DirichletBody("d", Sphere((0.0, 0.0), 0.5), 1.0)])
    sol = solve_grid(law, cfg, BoundaryCondition(kind="dirichlet-box", values=0.0),
                     Grid.from_box((-2, -2), (2, 2), (64, 64)), tol=1e-10)
    q = total_charge(cfg.bodies[0], 2, sol)
    # potential G q log(r/R) with an effective outer radius of about 1.08 box half-widths
    assert q == pytest.approx(-1.0 / math.log(2.0 * 1.08 / 0.5), rel=0.1)
    eff = effective_charge_density(sol)
    inner = np.zeros(sol.grid.shape, bool)
    inner[8:-8, 8:-8] = True
    # the conductor appears as a surface layer; box flux and summed divergence are two quadratures
    assert eff[inner].sum() * sol.grid.cell_volume == pytest.approx(q, rel=1e-2)
    assert np.abs(eff[sol.grid.points()[:, 0].reshape(64, 64) ** 2 + sol.grid.points()[:, 1].reshape(64, 64) ** 2
                      < 0.3 ** 2]).max() < 1e-8


def test_scale_configuration(sphere_solution):
    grid_l, phi_l, rho_l = scale_configuration(sphere_solution, sphere_solution.rho, 2.0)
    assert grid_l.h == tuple(2 * h for h in sphere_solution.grid.h)
    np.testing.assert_allclose(phi_l, 2 * sphere_solution.phi)
    # charge scales as lam**(D-1)
    assert rho_l.sum() * grid_l.cell_volume == pytest.approx(2.0 * sphere_solution.rho.sum()
                                                             * sphere_solution.grid.cell_volume)
    with pytest.raises(ValueError):
        scale_configuration(sphere_solution, sphere_solution.rho, -1.0)

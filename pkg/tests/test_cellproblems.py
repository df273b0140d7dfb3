import math

import numpy as np
import pytest

from thinporous.cellproblems import (IncompatibleProblemError, PermeabilityTensor,
                                     dirichlet_energy, heleshaw_energy, permeability,
                                     profile_integral, reconstruct_velocity,
                                     reduced3d_crosscheck, solve_heleshaw_cell,
                                     solve_stokes2d_cell, solve_stokes3d_cell, worker_count)
from thinporous.grid import ObstacleShape, build_geometry, discrete_div
from thinporous.linsolve import SolverConfig
from thinporous.regimes import Regime

TIGHT = SolverConfig(1e-12)


def rayleigh_square_array(phi):
    """Effective conductivity of a square array of insulating cylinders."""
    return 1 - 2 * phi / (1 + phi - 0.305827 * phi ** 4 / (1 - 1.402958 * phi ** 8)
                          - 0.013362 * phi ** 8)


def sangani_acrivos(a):
    """Dilute-array permeability of a square array of cylinders of radius a."""
    phi = math.pi * a * a
    return a * a / (8 * phi) * (-math.log(phi) - 1.47633597 + 2 * phi
                                - 1.77428264 * phi ** 2 + 4.07770444 * phi ** 3)


@pytest.fixture(scope="module")
def disk32():
    return build_geometry(ObstacleShape.disk(0.25), 32)


def test_htpm_empty_is_incompatible():
    with pytest.raises(IncompatibleProblemError):
        solve_stokes2d_cell(build_geometry(ObstacleShape.none(), 16))
    with pytest.raises(IncompatibleProblemError):
        permeability(Regime.HTPM, build_geometry(ObstacleShape.none(), 16))


def test_htpm_disk_isotropic(disk32):
    kt = permeability(Regime.HTPM, disk32)
    k = kt.k[0, 0]
    assert k > 0 and abs(kt.k[0, 0] - kt.k[1, 1]) <= 1e-6 * k
    assert abs(kt.k[0, 1]) <= 1e-6 * k
    assert kt.asymmetry <= 1e-6 * k


@pytest.mark.parametrize("regime", ["HTPM", "VTPM"])
def test_rectangle_anisotropy_and_transpose(regime):
    shape = ObstacleShape.rectangle(0.3, 0.1)
    k = permeability(regime, build_geometry(shape, 32)).k
    kt = permeability(regime, build_geometry(shape.transposed(), 32)).k
    # flow along the long side is easier
    assert k[0, 0] > k[1, 1] > 0
    assert abs(k[0, 1]) <= 1e-8 * k[0, 0]
    assert np.allclose(np.diag(kt), np.diag(k)[::-1], rtol=1e-8, atol=0)


def test_ptpm_rectangle_anisotropy():
    k = permeability(Regime.PTPM, build_geometry(ObstacleShape.rectangle(0.3, 0.1), 16, 8)).k
    assert k[0, 0] > k[1, 1] > 0


def test_ptpm_poiseuille_second_order():
    errs = []
    for nz in (16, 32, 64):
        k = permeability(Regime.PTPM, build_geometry(ObstacleShape.none(), 8, nz), TIGHT).k
        assert abs(k[0, 0] - k[1, 1]) <= 1e-12 and abs(k[0, 1]) <= 1e-12
        errs.append(abs(k[0, 0] - 1 / 12))
    assert errs[1] <= 1e-4
    assert math.log2(errs[0] / errs[1]) >= 1.9 and math.log2(errs[1] / errs[2]) >= 1.9


def test_ptpm_disk_below_channel():
    kt = permeability(Regime.PTPM, build_geometry(ObstacleShape.disk(0.25), 16, 8))
    k = kt.k[0, 0]
    assert 0 < k < 1 / 12
    assert abs(kt.k[0, 0] - kt.k[1, 1]) <= 1e-6 * k


def test_zero_force_vertical_problem():
    geom = build_geometry(ObstacleShape.disk(0.25), 8, 8)
    sol, kt = solve_stokes3d_cell(geom, TIGHT, forces=[(0.0, 0.0, 0.0)])
    for comp in sol.velocity[0].components().values():
        assert np.abs(comp).max() == 0.0
    assert np.abs(sol.pressure[0]).max() == 0.0
    assert np.abs(kt.k).max() == 0.0


def test_vtpm_empty_identity():
    geom = build_geometry(ObstacleShape.none(), 16)
    sol, kt = solve_heleshaw_cell(geom)
    assert np.abs(kt.k - np.eye(2)).max() <= 1e-10
    assert all(np.abs(p).max() == 0 for p in sol.pressure)


def test_vtpm_disk_against_rayleigh():
    # first-order staircase convergence towards the Rayleigh value
    ref = rayleigh_square_array(math.pi / 16)
    errs = []
    for n in (64, 128):
        geom = build_geometry(ObstacleShape.disk(0.25), n)
        k = permeability(Regime.VTPM, geom).k
        assert abs(k[0, 0] - k[1, 1]) <= 1e-10 and abs(k[0, 1]) <= 1e-10
        assert 0 < k[0, 0] < geom.fluid_fraction
        errs.append(abs(k[0, 0] - ref))
        assert errs[-1] <= 1.0 / n
    assert 1.6 <= errs[0] / errs[1] <= 2.6


def test_htpm_disk_against_dilute_series():
    ref = sangani_acrivos(0.25)
    for n in (64, 128):
        k = permeability(Regime.HTPM, build_geometry(ObstacleShape.disk(0.25), n)).k[0, 0]
        assert abs(k / ref - 1) <= 0.02


def test_mesh_convergence_htpm():
    ks = [permeability(Regime.HTPM, build_geometry(ObstacleShape.disk(0.25), n)).k[0, 0]
          for n in (16, 32, 64)]
    d1, d2 = abs(ks[0] - ks[1]), abs(ks[1] - ks[2])
    assert d2 < d1 and math.log2(d1 / d2) >= 1


def test_energy_identity_htpm(disk32):
    kt, sol = permeability(Regime.HTPM, disk32, TIGHT, return_solution=True)
    for i in range(2):
        e = dirichlet_energy(sol.velocity[i], disk32)
        assert abs(e - kt.k[i, i]) <= 1e-6 * kt.k[i, i]


def test_energy_identity_ptpm():
    geom = build_geometry(ObstacleShape.ellipse(0.3, 0.15, rotation=0.5), 16, 8)
    kt, sol = permeability(Regime.PTPM, geom, TIGHT, return_solution=True)
    for i in range(2):
        e = dirichlet_energy(sol.velocity[i], geom)
        assert abs(e - kt.k[i, i]) <= 1e-6 * kt.k[i, i]


def test_energy_identity_vtpm(disk32):
    sol, kt = solve_heleshaw_cell(disk32, TIGHT)
    for i in range(2):
        assert abs(heleshaw_energy(sol, i) - kt.k[i, i]) <= 1e-8 * kt.k[i, i]


def test_solution_structure_2d(disk32):
    cfg = SolverConfig(1e-10)
    kt, sol = permeability(Regime.HTPM, disk32, cfg, return_solution=True)
    for i in range(2):
        w = sol.velocity[i]
        assert np.abs(w.u[disk32.solid_u]).max() == 0 and np.abs(w.v[disk32.solid_v]).max() == 0
        div = discrete_div(w)[disk32.fluid_cell]
        assert np.abs(div).max() <= 10 * cfg.rel_tol * disk32.n
        assert abs(sol.pressure[i][disk32.fluid_cell].mean()) <= 1e-12


def test_solution_structure_3d():
    geom = build_geometry(ObstacleShape.disk(0.25), 12, 8)
    kt, sol = permeability(Regime.PTPM, geom, TIGHT, return_solution=True)
    w = sol.velocity[0]
    for comp in (w.u, w.v):
        assert np.abs(comp[:, :, [0, -1]]).max() == 0
    assert np.abs(w.w[:, :, [0, -1]]).max() == 0
    assert np.abs(w.u[geom.solid_u]).max() == 0
    div = discrete_div(w)[:, :, 1:-1][geom.extruded(geom.fluid_cell, geom.nz - 1)]
    assert np.abs(div).max() <= 1e-8


def test_domain_monotonicity():
    radii = (0.15, 0.25, 0.35)
    for regime in ("HTPM", "VTPM"):
        ks = [permeability(regime, build_geometry(ObstacleShape.disk(r), 32)).k for r in radii]
        for a, b in zip(ks, ks[1:]):
            assert np.linalg.eigvalsh(a - b).min() >= -1e-10
    small = permeability("PTPM", build_geometry(ObstacleShape.disk(0.15), 16, 8)).k
    big = permeability("PTPM", build_geometry(ObstacleShape.disk(0.35), 16, 8)).k
    assert np.linalg.eigvalsh(small - big).min() >= 0


def test_positive_definite_random_directions():
    rng = np.random.default_rng(0)
    geom = build_geometry(ObstacleShape.ellipse(0.3, 0.12, rotation=0.7), 32)
    for regime in ("HTPM", "VTPM"):
        kt = permeability(regime, geom)
        x = rng.standard_normal((100, 2))
        x /= np.linalg.norm(x, axis=1)[:, None]
        assert np.all(np.einsum("ni,ij,nj->n", x, kt.k, x) > 0)
        assert kt.is_spd()
        assert np.all(np.diag(kt.k) < geom.fluid_fraction)


def test_profile_integral():
    assert abs(profile_integral("exact") + 1 / 12) <= 1e-12
    assert abs(profile_integral("gauss") + 1 / 12) <= 1e-12
    for nz in (8, 16, 32):
        # midpoint error for a quadratic is h^2/24 times the second derivative
        assert abs(profile_integral("midpoint", nz) + 1 / 12 + 1 / (24 * nz ** 2)) <= 1e-15


def test_crosscheck(disk32):
    A, B = reduced3d_crosscheck(build_geometry(ObstacleShape.none(), 16))
    assert np.abs(A - np.eye(2)).max() <= 1e-12 and np.abs(B - np.eye(2)).max() <= 1e-12
    A, B = reduced3d_crosscheck(disk32)
    assert np.abs(A - B).max() <= 1e-10 * np.abs(B).max()


def test_reconstruction_vanishes_on_walls(disk32):
    sol, _ = solve_heleshaw_cell(disk32)
    u, v = reconstruct_velocity(sol, 0, np.array([0.0, 0.5, 1.0]))
    assert np.abs(u[:, :, [0, 2]]).max() == 0 and np.abs(v[:, :, [0, 2]]).max() == 0
    # mid-plane value is -1/8 of the Hele-Shaw flux
    assert np.allclose(u[:, :, 1], -0.125 * sol.flux[0].u)


def test_tensor_json_round_trip(disk32):
    from thinporous.config import dumps
    kt = permeability(Regime.VTPM, disk32)
    back = PermeabilityTensor.from_json(dumps(kt.to_dict()))
    assert back.regime is Regime.VTPM and np.array_equal(back.k, kt.k)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("TPM_THREADS", "1")
    assert worker_count(2) == 1
    monkeypatch.setenv("TPM_THREADS", "8")
    assert worker_count(2) == 2


def test_threads_do_not_change_results(monkeypatch, disk32):
    monkeypatch.setenv("TPM_THREADS", "1")
    k1 = permeability(Regime.HTPM, disk32).k
    monkeypatch.setenv("TPM_THREADS", "2")
    k2 = permeability(Regime.HTPM, disk32).k
    assert np.array_equal(k1, k2)

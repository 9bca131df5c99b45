import numpy as np
import pytest
from scipy.integrate import quad

from qcmd import ModelSpec, build_model, dynamics, espec, qref, wkb
from qcmd.errors import CausticError


def free_model():
    return build_model(ModelSpec(family="free"))


def cos_model(a=0.1):
    return build_model(ModelSpec(family="scalar_cos", params={"a": a}))


# ----------------------------------------------------------- quantization

def test_quantized_energy_free_matches_exact_eigenvalue():
    m = free_model()
    M = 1024.0
    for k in (3, 10, 40):
        E = wkb.quantized_energy(m, k, M)
        exact = (2 * np.pi * k / m.L) ** 2 / (2 * M)
        assert E == pytest.approx(exact, rel=1e-12)


def test_quantization_residual_small():
    m = cos_model(0.1)
    M = 1024.0
    k = wkb.bohr_sommerfeld_index(m, 1.0, M)
    E = wkb.quantized_energy(m, k, M)
    action, _ = quad(lambda x: np.sqrt(2 * (E - 0.1 * np.cos(x))), 0, 2 * np.pi,
                     epsabs=1e-14, limit=400)
    assert abs(action - 2 * np.pi * k / np.sqrt(M)) < 1e-10


def test_quantized_energy_monotone_in_k():
    m = cos_model(0.2)
    energies = [wkb.quantized_energy(m, k, 256.0) for k in range(10, 16)]
    assert np.all(np.diff(energies) > 0)


def test_quantized_energy_below_barrier_raises():
    m = cos_model(0.5)
    with pytest.raises(ValueError, match="barrier"):
        wkb.quantized_energy(m, 1, 1e6)


# ------------------------------------------------------------ weight_along

def _bo_loop(m, E, dt=2e-4, t_final=5.0, X0=0.5):
    lam0 = espec.eigen_at(m, X0)[0][0]
    p0 = np.sqrt(2 * (E - lam0))
    return dynamics.simulate(m, dynamics.PhaseState.make(X0, p0), "bo",
                             T_final=t_final, dt=dt)


def test_weight_free_trivial():
    m = free_model()
    traj = _bo_loop(m, 0.5, dt=1e-3)
    wv = wkb.weight_along(traj, m)
    assert np.abs(wv.G - 1.0).max() < 1e-12
    assert np.abs(wv.J - 1.0).max() < 1e-12


def test_weight_one_dimensional_identity():
    m = cos_model(0.1)
    traj = _bo_loop(m, 1.0)
    wv = wkb.weight_along(traj, m)
    p = traj.p[:, 0]
    dev = np.abs(wv.G ** 2 / wv.G[0] ** 2 - p / p[0]).max()
    assert dev < 1e-8


def test_weight_liouville_identity():
    m = cos_model(0.2)
    traj = _bo_loop(m, 0.9)
    wv = wkb.weight_along(traj, m)           # raises beyond 1e-6 internally
    assert np.abs(wv.G ** 2 / wv.G[0] ** 2 - wv.J).max() < 1e-6


def test_first_variation_matches_bumped_trajectory():
    m = cos_model(0.15)
    E = 1.0
    traj = _bo_loop(m, E, dt=5e-4, t_final=3.0)
    wv = wkb.weight_along(traj, m)
    dX0 = 1e-6
    X0 = 0.5
    p_of = lambda x: np.sqrt(2 * (E - 0.15 * np.cos(x)))
    bumped = dynamics.simulate(m, dynamics.PhaseState.make(X0 + dX0, p_of(X0 + dX0)),
                               "bo", T_final=3.0, dt=5e-4)
    J_num = (bumped.X[:, 0] - traj.X[:, 0]) / dX0
    assert np.abs(J_num - wv.J).max() < 1e-4


def test_weight_requires_bo_scheme():
    m = cos_model(0.1)
    rng = np.random.default_rng(0)
    traj = dynamics.simulate(m, dynamics.PhaseState.make(0.0, 1.0), "smoluchowski",
                             T_final=1.0, dt=0.01,
                             rng=np.random.default_rng(1), T=0.1)
    with pytest.raises(NotImplementedError):
        wkb.weight_along(traj, m)


# ---------------------------------------------------------------- density

def test_density_free_uniform():
    m = free_model()
    field = wkb.field_from_energy(m, 0.5, M=64.0, n_grid=128)
    assert np.abs(field.rho - 1.0 / m.L).max() < 1e-14
    rho = wkb.density(field)
    assert np.abs(rho - 1.0 / m.L).max() < 1e-12


def test_density_normalized_and_momentum_product_constant():
    m = cos_model(0.1)
    field = wkb.field_from_energy(m, 1.0, M=256.0, n_grid=512)
    h = m.L / field.grid.size
    assert abs(field.rho.sum() * h - 1.0) < 1e-8
    prod = field.rho * field.pfield
    assert np.abs(prod - prod[0]).max() < 1e-8
    assert np.all(field.rho > 0)


def test_theta_matches_momentum_quadrature():
    m = cos_model(0.1)
    E = 1.0
    field = wkb.field_from_energy(m, E, M=256.0, n_grid=1024)
    for i in (100, 500, 900):
        target, _ = quad(lambda x: np.sqrt(2 * (E - 0.1 * np.cos(x))), 0,
                         field.grid[i], epsabs=1e-12, limit=200)
        assert abs(field.theta[i] - target) < 1e-8


def test_theta_matches_trajectory_action():
    m = cos_model(0.1)
    E = 1.0
    field = wkb.field_from_energy(m, E, M=256.0, n_grid=1024)
    traj = _bo_loop(m, E, dt=1e-4, t_final=4.0, X0=0.0)
    # z(t) accumulates the action along the path; theta is its position field
    for i in (1000, 20000):
        X_t = traj.X[i, 0]
        if X_t < m.L:
            theta_interp = np.interp(X_t, field.grid, field.theta)
            assert abs(traj.z[i] - theta_interp) < 1e-6


# ------------------------------------------------------------- caustics

def test_caustics_empty_above_barrier():
    m = cos_model(0.1)
    field = wkb.field_from_energy(m, 0.1 + 0.15, M=64.0, n_grid=256)
    assert wkb.detect_caustics(field) == []
    assert wkb.detect_caustics(wkb.field_from_energy(free_model(), 0.3, M=64.0)) == []


def test_caustic_raised_below_barrier():
    m = cos_model(0.2)
    with pytest.raises(CausticError):
        wkb.field_from_energy(m, 0.1, M=64.0)   # E < max lambda_0 = 0.2


def test_trajectory_caustics_at_turning_point():
    m = cos_model(0.3)
    E = 0.15                                     # below the 0.3 barrier
    X0 = np.pi
    p0 = np.sqrt(2 * (E - 0.3 * np.cos(X0)))
    traj = dynamics.simulate(m, dynamics.PhaseState.make(X0, p0), "bo",
                             T_final=12.0, dt=1e-3)
    locations = wkb.detect_caustics(traj, model=m)
    assert locations                              # J vanishes at the turning point


# ----------------------------------------------------------- assembly

def test_assemble_free_plane_wave():
    m = free_model()
    M, k = 1024.0, 7
    E = wkb.quantized_energy(m, k, M)
    field = wkb.field_from_energy(m, E, M, n_grid=256, k=k)
    basis = espec.eigendecompose_field(m, field.grid)
    Phi = wkb.assemble_wkb_eigenfunction(m, field, basis, M)
    expect = np.exp(1j * 2 * np.pi * k * field.grid / m.L) / np.sqrt(m.L)
    assert np.abs(Phi[:, 0] - expect).max() < 1e-10


def test_assemble_norm_and_quantization_guard():
    m = cos_model(0.1)
    M = 256.0
    k = wkb.bohr_sommerfeld_index(m, 1.0, M)
    field = wkb.build_field(m, M, k, n_grid=512)
    basis = espec.eigendecompose_field(m, field.grid)
    Phi = wkb.assemble_wkb_eigenfunction(m, field, basis, M)
    h = m.L / field.grid.size
    assert abs(h * np.sum(np.abs(Phi) ** 2) - 1.0) < 1e-10
    bad = wkb.field_from_energy(m, field.E * 1.01, M, n_grid=512)
    with pytest.raises(ValueError, match="quantized"):
        wkb.assemble_wkb_eigenfunction(m, bad, basis, M)


def test_ehrenfest_field_builder_scalar_reduces_to_bo():
    m = cos_model(0.1)
    M = 256.0
    k = wkb.bohr_sommerfeld_index(m, 1.0, M)
    f_bo = wkb.build_field(m, M, k, scheme="bo", n_grid=256)
    f_e = wkb.build_field(m, M, k, scheme="ehrenfest", n_grid=256)
    assert abs(f_e.E - f_bo.E) < 1e-5
    assert np.abs(f_e.pfield - f_bo.pfield).max() < 1e-4
    assert np.abs(np.abs(f_e.psi[:, 0]) - 1.0).max() < 1e-10


def test_wkb_residual_decays_with_mass():
    # coarse two-point version of the residual sweep (full sweep in acceptance)
    m = cos_model(0.1)
    res = []
    for M in (64.0, 1024.0):
        k = wkb.bohr_sommerfeld_index(m, 1.0, M)
        E = wkb.quantized_energy(m, k, M)
        n = 512
        H = qref.assemble_hamiltonian(m, M, n)
        field = wkb.field_from_energy(m, E, M, n_grid=n, k=k)
        basis = espec.eigendecompose_field(m, field.grid)
        Phi = wkb.assemble_wkb_eigenfunction(m, field, basis, M)
        res.append(qref.residual_norm(H, Phi, E))
    assert res[1] < res[0] / 4.0

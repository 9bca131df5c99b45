import numpy as np
import pytest

from qcmd import ModelSpec, build_model, qref
from qcmd.errors import ResolutionError


def free_model():
    return build_model(ModelSpec(family="free"))


def gap_model():
    return build_model(ModelSpec(family="two_level_gap", params={"delta": 0.25}, d=2))


def test_free_spectrum_exact():
    m = free_model()
    M = 64.0
    H = qref.assemble_hamiltonian(m, M, 64)
    pairs = qref.eigensolve_near(H, 0.0, count=3)
    lowest = sorted(p.E for p in pairs)
    k1 = (2 * np.pi / m.L) ** 2 / (2 * M)
    assert abs(lowest[0]) < 1e-12
    assert lowest[1] == pytest.approx(k1, rel=1e-10)
    assert lowest[2] == pytest.approx(k1, rel=1e-10)   # (+k, -k) doublet


def test_hamiltonian_exactly_symmetric():
    m = gap_model()
    H = qref.assemble_hamiltonian(m, 64.0, 64)
    assert np.abs(H.matrix - H.matrix.T).max() == 0.0


def test_gap_eigenvalues_real_sorted():
    m = gap_model()
    H = qref.assemble_hamiltonian(m, 64.0, 128)
    pairs = qref.eigensolve_near(H, 0.3, count=6)
    energies = [p.E for p in pairs]
    assert all(np.isreal(e) for e in energies)
    dists = [abs(e - 0.3) for e in energies]
    assert dists == sorted(dists)


def test_residuals_and_orthonormality():
    m = gap_model()
    H = qref.assemble_hamiltonian(m, 256.0, 256)
    pairs = qref.eigensolve_near(H, 0.4, count=4)
    h = m.L / H.n_grid
    for p in pairs:
        assert p.residual <= 1e-8
    for a in pairs:
        for b in pairs:
            ip = h * np.sum(np.conj(a.Phi) * b.Phi).real
            expect = 1.0 if a is b else 0.0
            if abs(a.E - b.E) > 1e-12 or a is b:
                assert abs(ip - expect) < 1e-10 or abs(a.E - b.E) < 1e-12


def test_target_below_ground_returns_lowest():
    m = free_model()
    H = qref.assemble_hamiltonian(m, 64.0, 64)
    pairs = qref.eigensolve_near(H, -50.0, count=2)
    assert min(p.E for p in pairs) == pytest.approx(0.0, abs=1e-12)


def test_density_free_uniform_and_normalized():
    m = free_model()
    H = qref.assemble_hamiltonian(m, 64.0, 64)
    pair = qref.eigensolve_near(H, 0.1, count=1)[0]
    rho = qref.density_from_state(pair)
    h = m.L / H.n_grid
    assert abs(rho.sum() * h - 1.0) < 1e-10
    # ground state of the free torus is flat
    ground = qref.eigensolve_near(H, -1.0, count=1)[0]
    assert np.abs(ground.density - 1.0 / m.L).max() < 1e-10


def test_observable_quadrature():
    grid = np.arange(64) * (2 * np.pi / 64)
    rho = np.full(64, 1.0 / (2 * np.pi))
    assert qref.observable(rho, lambda x: np.ones_like(x), grid) == pytest.approx(1.0, abs=1e-14)
    assert abs(qref.observable(rho, lambda x: np.cos(x), grid)) < 1e-12
    with pytest.raises(ValueError):
        qref.observable(rho[:10], np.cos, grid)


def test_residual_norm_exact_pair_and_mismatch():
    m = gap_model()
    H = qref.assemble_hamiltonian(m, 64.0, 128)
    pair = qref.eigensolve_near(H, 0.3, count=1)[0]
    assert qref.residual_norm(H, pair.Phi, pair.E) <= 1e-8
    with pytest.raises(ValueError, match="mismatch"):
        qref.residual_norm(H, pair.Phi[:10], pair.E)


def test_grid_refinement_converged():
    m = gap_model()
    M = 64.0
    vals = []
    for n in (128, 256):
        H = qref.assemble_hamiltonian(m, M, n)
        vals.append(qref.eigensolve_near(H, 0.3, count=1)[0].E)
    assert abs(vals[1] - vals[0]) <= 1e-8


def test_resolution_rule_refuses():
    m = free_model()
    with pytest.raises(ResolutionError) as err:
        qref.assemble_hamiltonian(m, 4096.0, 64, e_max=2.0)
    assert err.value.required > 64


def test_fd4_laplacian_close_to_spectral():
    m = gap_model()
    Hs = qref.assemble_hamiltonian(m, 64.0, 512, laplacian="spectral")
    Hf = qref.assemble_hamiltonian(m, 64.0, 512, laplacian="fd4")
    Es = qref.eigensolve_near(Hs, 0.3, count=1)[0].E
    Ef = qref.eigensolve_near(Hf, 0.3, count=1)[0].E
    assert abs(Es - Ef) < 1e-4


def test_doublet_splitting_small():
    m = build_model(ModelSpec(family="scalar_cos", params={"a": 0.1}))
    H = qref.assemble_hamiltonian(m, 256.0, 256)
    pairs = qref.eigensolve_near(H, 1.0, count=2)
    assert abs(pairs[0].E - pairs[1].E) < 1e-6

"""WKB field assembly on the torus.

Quantized energy selection, phase and weight fields, the classical density,
caustic detection, and assembly of the approximate eigenfunction
rho^(1/2) psi exp(i sqrt(M) theta) on a reference grid.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import dynamics, espec
from .errors import CausticError
from ._util import periodic_antiderivative, periodic_grid, periodic_integral

__all__ = [
    "WkbField",
    "WeightVariation",
    "action_integral",
    "quantized_energy",
    "bohr_sommerfeld_index",
    "build_field",
    "field_from_energy",
    "weight_along",
    "density",
    "detect_caustics",
    "assemble_wkb_eigenfunction",
]

EPS_CAUSTIC = 1e-6


@dataclass(frozen=True)
class WkbField:
    """Grid fields (theta, p, G, rho, psi) at a fixed quantized energy."""

    grid: np.ndarray
    E: float
    theta: np.ndarray
    pfield: np.ndarray
    G: np.ndarray
    rho: np.ndarray
    psi: np.ndarray
    M: float
    scheme: str = "bo"
    k: int = None
    first_variation: np.ndarray = None


@dataclass(frozen=True)
class WeightVariation:
    """Weight G and first variation J = dX_t/dX_0 along a trajectory."""

    t: np.ndarray
    G: np.ndarray
    J: np.ndarray


def _ground_level_grid(model, n):
    grid = periodic_grid(model.L, n)
    return grid, espec.eigenvalues_along(model, grid)[:, 0]


def action_integral(model, E, n_quad=4096, potential=None):
    """One-loop action: integral over the torus of sqrt(2(E - V_0(X)))."""
    if potential is None:
        _, lam0 = _ground_level_grid(model, n_quad)
    else:
        lam0 = potential(periodic_grid(model.L, n_quad))
    gap = 2.0 * (E - lam0)
    if gap.min() <= 0.0:
        raise CausticError(f"E = {E} is not above the potential barrier")
    return float(periodic_integral(np.sqrt(gap), model.L))


def quantized_energy(model, k, M, margin=1e-9, n_quad=4096, potential=None):
    """Energy whose one-loop action equals 2 pi k / sqrt(M).

    Bracketed root finding to relative 1e-12; fails when the requested index
    puts the energy at or below the barrier top.
    """
    if k < 1:
        raise ValueError("quantization index k must be >= 1")
    if potential is None:
        _, lam0 = _ground_level_grid(model, n_quad)
    else:
        lam0 = potential(periodic_grid(model.L, n_quad))
    barrier = float(lam0.max())
    target = 2.0 * np.pi * k / np.sqrt(M)

    def residual(E):
        return float(periodic_integral(np.sqrt(2.0 * (E - lam0)), model.L)) - target

    E_lo = barrier + max(margin, 1e-12 * max(1.0, abs(barrier)))
    if residual(E_lo) >= 0.0:
        raise ValueError(
            f"no quantized energy above the barrier for k = {k} at M = {M}")
    E_hi = barrier + 1.0
    while residual(E_hi) < 0.0:
        E_hi = barrier + 2.0 * (E_hi - barrier)
    E = brentq(residual, E_lo, E_hi, xtol=1e-14, rtol=1e-15, maxiter=200)
    return float(E)


def quantized_energy_from_profiles(profiles, L, k, M, margin=1e-9,
                                   index_offset=0.0):
    """Energy whose summed loop action over the given level curves matches index k.

    ``profiles`` holds potential samples of each branch in the loop on a
    uniform torus grid; the action is the sum of the branch actions.
    ``index_offset`` carries connection phases (a quarter per crossing pass).
    """
    profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
    barrier = float(profiles.max())
    target = 2.0 * np.pi * (k + index_offset) / np.sqrt(M)

    def action(E):
        gap = 2.0 * (E - profiles)
        return float(sum(periodic_integral(np.sqrt(g), L) for g in gap))

    def residual(E):
        return action(E) - target

    E_lo = barrier + max(margin, 1e-12 * max(1.0, abs(barrier)))
    if residual(E_lo) >= 0.0:
        raise ValueError(f"no quantized energy above the barrier for k = {k}")
    E_hi = barrier + 1.0
    while residual(E_hi) < 0.0:
        E_hi = barrier + 2.0 * (E_hi - barrier)
    return float(brentq(residual, E_lo, E_hi, xtol=1e-14, rtol=1e-15, maxiter=200))


def profile_action(profiles, L, E):
    profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
    gap = 2.0 * (E - profiles)
    if gap.min() <= 0.0:
        raise CausticError(f"E = {E} is not above the loop barrier")
    return float(sum(periodic_integral(np.sqrt(g), L) for g in gap))


def bohr_sommerfeld_index(model, E_ref, M, potential=None):
    """Quantization index whose energy is nearest E_ref."""
    return max(1, round(action_integral(model, E_ref, potential=potential)
                        * np.sqrt(M) / (2.0 * np.pi)))


def field_from_energy(model, E, M, n_grid=1024, scheme="bo", basis=None, k=None):
    """Assemble the grid fields for a given energy on the ground surface."""
    grid = periodic_grid(model.L, n_grid)
    if basis is None:
        basis = espec.eigendecompose_field(model, grid)
    elif basis.grid.shape != grid.shape or not np.allclose(basis.grid, grid):
        raise ValueError("basis grid does not match the requested field grid")
    lam0 = basis.lambdas[:, 0]
    p_sq = 2.0 * (E - lam0)
    if p_sq.min() <= EPS_CAUSTIC ** 2:
        raise CausticError(
            f"momentum field vanishes (min p^2 = {p_sq.min():.3e}); caustic present")
    pfield = np.sqrt(p_sq)
    theta = periodic_antiderivative(pfield, model.L)
    G = np.sqrt(pfield / pfield[0])
    inv_p = 1.0 / pfield
    rho = inv_p / periodic_integral(inv_p, model.L)
    psi = basis.vectors[:, :, 0].astype(complex)
    return WkbField(grid=grid, E=float(E), theta=theta, pfield=pfield, G=G,
                    rho=rho, psi=psi, M=float(M), scheme=scheme, k=k)


def _ehrenfest_effective_potential(model, E0, M, dt=None, c_step=0.1):
    """One Ehrenfest loop; returns periodic splines of V_hat_0(X) and psi_hat(X)."""
    lam0_start = espec.eigen_at(model, 0.0)[0][0]
    p0 = np.sqrt(2.0 * (E0 - lam0_start))
    phi0 = dynamics.initial_electron_state(model, 0.0, p0, M)
    init = dynamics.PhaseState.make(0.0, p0, phi=phi0)
    if dt is None:
        dt = min(c_step / np.sqrt(M), 2e-3)
    traj = dynamics.simulate(model, init, "ehrenfest", T_final=10.0 * model.L / p0,
                             dt=dt, surface=0.0, M=M, max_hits=1, c_step=c_step)
    if not traj.hits:
        raise CausticError("Ehrenfest loop did not close; cannot build the field")
    tau = traj.hits[0].tau
    inside = traj.t <= tau
    t_s = traj.t[inside]
    X_s = traj.X[inside, 0]
    v0_s = traj.H[inside] - 0.5 * traj.p[inside, 0] ** 2
    # dynamical dressing: psi_hat = phi * exp(i sqrt(M) int V_hat_0 dt)
    phase = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t_s) * (v0_s[1:] + v0_s[:-1]))])
    psi_s = traj.phi[inside] * np.exp(1j * np.sqrt(M) * phase)[:, None]
    # force exact periodicity at the seam (mismatch is the loop monodromy error)
    X_ext = np.append(X_s, model.L)
    v0_spline = CubicSpline(X_ext, np.append(v0_s, v0_s[0]), bc_type="periodic")
    psi_splines = [
        (CubicSpline(X_ext, np.append(psi_s[:, n].real, psi_s[0, n].real), bc_type="periodic"),
         CubicSpline(X_ext, np.append(psi_s[:, n].imag, psi_s[0, n].imag), bc_type="periodic"))
        for n in range(model.d)
    ]
    return v0_spline, psi_splines


def build_field(model, M, k, scheme="bo", n_grid=1024, basis=None):
    """Quantize the energy for index k and assemble the field."""
    if scheme == "bo":
        E = quantized_energy(model, k, M)
        return field_from_energy(model, E, M, n_grid=n_grid, scheme="bo",
                                 basis=basis, k=k)
    if scheme != "ehrenfest":
        raise ValueError(f"unknown scheme {scheme!r}")
    E0 = quantized_energy(model, k, M)
    v0_spline, psi_splines = _ehrenfest_effective_potential(model, E0, M)
    E = quantized_energy(model, k, M, potential=v0_spline)
    grid = periodic_grid(model.L, n_grid)
    v0 = v0_spline(grid)
    p_sq = 2.0 * (E - v0)
    if p_sq.min() <= EPS_CAUSTIC ** 2:
        raise CausticError("Ehrenfest momentum field vanishes; caustic present")
    pfield = np.sqrt(p_sq)
    theta = periodic_antiderivative(pfield, model.L)
    G = np.sqrt(pfield / pfield[0])
    inv_p = 1.0 / pfield
    rho = inv_p / periodic_integral(inv_p, model.L)
    psi = np.empty((n_grid, model.d), dtype=complex)
    for n, (re_s, im_s) in enumerate(psi_splines):
        psi[:, n] = re_s(grid) + 1j * im_s(grid)
    norms = np.linalg.norm(psi, axis=1, keepdims=True)
    psi /= norms
    return WkbField(grid=grid, E=float(E), theta=theta, pfield=pfield, G=G,
                    rho=rho, psi=psi, M=float(M), scheme="ehrenfest", k=k)


def weight_along(trajectory, model, check_tol=1e-6, eps_caustic=EPS_CAUSTIC):
    """Integrate the weight G and the first variation J along a trajectory.

    The tangent flow of the Verlet step is propagated with the Lagrangian
    initialization dp/dX = -lambda_0'(X_0)/p_0, the log-weight accumulates
    (1/2) dp/dX by Simpson, and the Liouville identity G_t^2/G_0^2 = J(t)
    is asserted to ``check_tol``.
    """
    if trajectory.scheme != "bo":
        raise NotImplementedError(
            "weight_along propagates the ground-surface tangent flow; "
            f"got scheme {trajectory.scheme!r}")
    t = trajectory.t
    n_steps = t.size - 1
    dt = trajectory.dt
    X = float(trajectory.X[0, 0])
    p = float(trajectory.p[0, 0])
    if abs(p) <= eps_caustic:
        raise CausticError("initial momentum vanishes")
    dX, dp = 1.0, espec.ground_force(model, X) / p
    log_g = 0.0
    G = np.empty(t.size)
    J = np.empty(t.size)
    G[0], J[0] = 1.0, 1.0
    for i in range(n_steps):
        u0 = dp / dX
        curv0 = espec.ground_curvature(model, X)
        p_half = p + 0.5 * dt * espec.ground_force(model, X)
        dp_half = dp - 0.5 * dt * curv0 * dX
        X1 = X + dt * p_half
        dX1 = dX + dt * dp_half
        dX_mid = dX + 0.5 * dt * dp_half
        u_mid = dp_half / dX_mid
        curv1 = espec.ground_curvature(model, X1)
        p1 = p_half + 0.5 * dt * espec.ground_force(model, X1)
        dp1 = dp_half - 0.5 * dt * curv1 * dX1
        u1 = dp1 / dX1
        log_g += dt / 12.0 * (u0 + 4.0 * u_mid + u1)
        X, p, dX, dp = X1, p1, dX1, dp1
        if dX <= eps_caustic:
            raise CausticError(f"first variation vanished at t = {t[i + 1]:.6g}")
        G[i + 1] = np.exp(log_g)
        J[i + 1] = dX
    dev = np.max(np.abs(G ** 2 / G[0] ** 2 - J) / np.maximum(1.0, np.abs(J)))
    if dev > check_tol:
        raise RuntimeError(
            f"Liouville identity violated: max |G^2/G_0^2 - det J| = {dev:.3e}")
    return WeightVariation(t=t.copy(), G=G, J=J)


def density(field):
    """Classical density C/G^2 on the grid, normalized to unit mass."""
    if np.any(field.pfield <= EPS_CAUSTIC):
        raise CausticError("momentum field vanishes; density undefined")
    raw = 1.0 / field.G ** 2
    rho = raw / periodic_integral(raw, field.grid[1] * len(field.grid))
    if np.any(rho <= 0.0):
        raise CausticError("density must stay positive")
    return rho


def detect_caustics(obj, model=None, eps=EPS_CAUSTIC):
    """Locations where the momentum field or the flow Jacobian vanishes.

    An empty list certifies the no-caustics hypothesis for the run.
    """
    if isinstance(obj, WkbField):
        mask = obj.pfield ** 2 <= eps
        return [float(x) for x in obj.grid[mask]]
    if model is None:
        raise ValueError("detecting caustics along a trajectory needs the model")
    try:
        wv = weight_along(obj, model, check_tol=np.inf, eps_caustic=-np.inf)
    except CausticError:
        return [float(obj.t[-1])]
    mask = wv.J <= eps
    return [float(tt) for tt in wv.t[mask]]


def assemble_wkb_eigenfunction(model, field, basis, M):
    """Complex d-vector field rho^(1/2) psi exp(i sqrt(M) theta), unit L2 norm.

    Requires the energy to be quantized so the phase factor is single-valued
    over the torus seam.
    """
    loop_action = periodic_integral(field.pfield, model.L)
    closure = np.sqrt(M) * loop_action
    mismatch = abs(closure - 2.0 * np.pi * np.round(closure / (2.0 * np.pi)))
    if mismatch > 1e-8:
        raise ValueError(
            f"energy not quantized: seam phase mismatch {mismatch:.3e} rad")
    if field.scheme == "ehrenfest":
        psi = field.psi
    else:
        if basis is None:
            basis = espec.eigendecompose_field(model, field.grid)
        psi = basis.vectors[:, :, 0].astype(complex)
    phi = np.sqrt(field.rho)[:, None] * psi * np.exp(1j * np.sqrt(M) * field.theta)[:, None]
    h = model.L / field.grid.size
    norm = np.sqrt(h * np.sum(np.abs(phi) ** 2))
    return phi / norm

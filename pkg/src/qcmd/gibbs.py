"""Canonical-ensemble electron sampling and equilibrium observables.

The electron coefficients gamma live on the unit sphere of C^d with density
proportional to exp(-sum_{j>0} gap_j |gamma_j|^2 / T).  A Gaussian proposal
(ground component at scale one, excited components at the unconstrained
variances) is normalized to the sphere and corrected by an independence
Metropolis step; marginal-mass ratios come from thermodynamic integration of
the sampled drift.
"""

from dataclasses import dataclass, field

import numpy as np

from . import dynamics, espec
from .errors import BoundViolationError, CrossingError
from ._util import periodic_grid, stream_rng

__all__ = [
    "GibbsSamples",
    "GibbsReport",
    "CorrectedPotential",
    "EquilibriumReport",
    "sample_electron_coefficients",
    "marginal_ratio",
    "gibbs_observable",
    "corrected_potential",
    "equilibrium_compare",
]


@dataclass(frozen=True)
class GibbsSamples:
    """Metropolis-corrected coefficient samples at one conditioning position."""

    gamma: np.ndarray          # (n, d) complex, unit rows
    weight: np.ndarray         # proposal importance weights (diagnostic)
    X: float
    ess: float
    acceptance: float
    proposal_log: tuple = None   # (logw_current, logw_proposal, accepted)


def gaps_at(model, X):
    lam = espec.eigen_at(model, X)[0]
    gaps = lam[1:] - lam[0]
    if gaps.size and gaps.min() <= 1e-12:
        raise CrossingError(f"level crossing at X = {X}; Gibbs sampling undefined")
    return gaps


def _draw_sphere(gaps, T, n, rng):
    d = gaps.size + 1
    var = np.concatenate([[1.0], T / gaps])          # complex variances E|gamma_j|^2
    scale = np.sqrt(var / 2.0)
    g = (rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))) * scale
    u = g / np.linalg.norm(g, axis=1, keepdims=True)
    S = (np.abs(u[:, 1:]) ** 2 @ gaps) / T
    logw = -S + d * np.log(np.abs(u[:, 0]) ** 2 + S)
    return u, logw


def sample_electron_coefficients(gaps, T, n_samples, rng, X=0.0, log_pairs=False):
    """Sphere-constrained coefficient samples at temperature T.

    ``gaps`` are the excited-level gaps at the conditioning position (all
    positive).  Returns unit-norm samples after the Metropolis correction,
    with the proposal effective sample size and acceptance rate reported.
    """
    gaps = np.asarray(gaps, dtype=float)
    if T <= 0.0:
        raise ValueError("sampling needs T > 0")
    if gaps.size and gaps.min() <= 0.0:
        raise CrossingError("all excited gaps must be positive")
    u, logw = _draw_sphere(gaps, T, n_samples + 1, rng)
    log_uniform = np.log(rng.uniform(size=n_samples))
    idx = np.empty(n_samples, dtype=int)
    logw_cur = np.empty(n_samples)
    accept = np.empty(n_samples, dtype=bool)
    cur = 0
    for i in range(n_samples):
        logw_cur[i] = logw[cur]
        accept[i] = log_uniform[i] <= logw[i + 1] - logw[cur]
        if accept[i]:
            cur = i + 1
        idx[i] = cur
    w = np.exp(logw - logw.max())
    ess = float(w.sum() ** 2 / np.sum(w ** 2))
    pairs = None
    if log_pairs:
        pairs = (logw_cur, logw[1:].copy(), accept)
    return GibbsSamples(gamma=u[idx], weight=np.ones(n_samples), X=float(X),
                        ess=ess, acceptance=float(accept.mean()),
                        proposal_log=pairs)


def _sphere_moments(gaps, T, n_samples, rng):
    """Self-normalized importance estimate of E[|u_j|^2] for the excited levels."""
    u, logw = _draw_sphere(gaps, T, n_samples, rng)
    w = np.exp(logw - logw.max())
    wsum = w.sum()
    v = np.abs(u[:, 1:]) ** 2
    mean = (w[:, None] * v).sum(axis=0) / wsum
    # delta-method variance of the ratio estimator
    var = np.sum((w[:, None] * (v - mean[None, :])) ** 2, axis=0) / wsum ** 2
    return mean, np.sqrt(var)


def marginal_ratio(model, X, X_c, T, n_samples=20000, rng=None, n_s=9,
                   check=True, seed=0):
    """log r(X) - log r(X_c) by thermodynamic integration, with its MC error.

    The drift d(log r)/dY = -(1/T) sum_j d(gap_j)/dY E_Y[|u_j|^2] is sampled
    on Gauss-Legendre nodes of the segment.  When ``check`` is on, the value
    is asserted against the kappa bound (plus 3 sigma MC slack).
    """
    if rng is None:
        rng = stream_rng(seed)
    X, X_c = float(X), float(X_c)
    if X == X_c:
        return 0.0, 0.0
    nodes, weights = np.polynomial.legendre.leggauss(n_s)
    s_nodes = 0.5 * (nodes + 1.0)
    s_weights = 0.5 * weights
    total = 0.0
    var = 0.0
    for s, w in zip(s_nodes, s_weights):
        y = X_c + s * (X - X_c)
        gaps, dgaps = espec.gap_derivatives(model, y)
        if gaps.min() <= 1e-12:
            raise CrossingError(f"crossing on the integration segment at X = {y}")
        mom, sig = _sphere_moments(gaps, T, n_samples, rng)
        drift = -(1.0 / T) * float(dgaps @ mom) * (X - X_c)
        total += w * drift
        var += (w * (X - X_c) / T) ** 2 * float(dgaps ** 2 @ sig ** 2)
    sigma = float(np.sqrt(var))
    if check:
        lo, hi = min(X, X_c), max(X, X_c)
        grid_hi = min(hi, model.L * (1.0 - 1e-12))
        basis = espec.eigendecompose_field(model, np.linspace(lo, grid_hi, 33))
        kap, _ = espec.kappa(basis, (lo, hi), X_c, T=T)
        if abs(total) > kap + 3.0 * sigma + 1e-12:
            raise BoundViolationError(
                f"|log ratio| = {abs(total):.3e} exceeds kappa + 3 sigma = {kap + 3 * sigma:.3e}")
    return float(total), sigma


@dataclass(frozen=True)
class GibbsReport:
    value: float               # observable with the marginal-mass weight
    value_plain: float         # r-free value
    difference: float
    sigma: float
    grid: np.ndarray = field(repr=False, default=None)
    log_r: np.ndarray = field(repr=False, default=None)


def gibbs_observable(model, g, T, n_grid=65, n_samples=20000, rng=None, seed=0):
    """Equilibrium position observable with and without the marginal mass r(X).

    Quadrature of g e^(-lambda_0/T) r(X) over the torus; log r is integrated
    once around from the drift sampled at every grid point (cached), so all
    ratios share one reference point.
    """
    if T <= 0.0:
        raise ValueError("gibbs_observable needs T > 0")
    if rng is None:
        rng = stream_rng(seed)
    grid = periodic_grid(model.L, n_grid)
    lam0 = np.empty(n_grid)
    drift = np.empty(n_grid)
    node_sigma = np.empty(n_grid)
    for i, x in enumerate(grid):
        lam = espec.eigen_at(model, x)[0]
        lam0[i] = lam[0]
        if model.d > 1:
            gaps, dgaps = espec.gap_derivatives(model, x)
            if gaps.min() <= 1e-12:
                raise CrossingError(f"crossing in the domain at X = {x}")
            mom, sig = _sphere_moments(gaps, T, n_samples, rng)
            drift[i] = -(1.0 / T) * float(dgaps @ mom)
            node_sigma[i] = np.sqrt(float(dgaps ** 2 @ sig ** 2)) / T
        else:
            drift[i] = 0.0
            node_sigma[i] = 0.0
    h = model.L / n_grid
    # cumulative trapezoid of the drift from the first grid point
    log_r = np.zeros(n_grid)
    log_r[1:] = np.cumsum(0.5 * h * (drift[1:] + drift[:-1]))
    gx = np.asarray(g(grid), dtype=float)

    def weighted(logr):
        lw = -lam0 / T + logr
        w = np.exp(lw - lw.max())
        return float((gx * w).sum() / w.sum())

    value = weighted(log_r)
    value_plain = weighted(np.zeros(n_grid))
    # propagate independent node errors through the cumulative integral
    w_full = np.exp(-lam0 / T + log_r - (-lam0 / T + log_r).max())
    w_norm = w_full / w_full.sum()
    resid = w_norm * (gx - value)
    coeff = np.zeros(n_grid)
    for k in range(n_grid):
        dlog = np.zeros(n_grid)     # dlog_r_i / ddrift_k, trapezoid weights
        if k == 0:
            dlog[1:] = 0.5 * h
        else:
            dlog[k] = 0.5 * h
            dlog[k + 1:] = h
        coeff[k] = float(resid @ dlog)
    sigma = float(np.sqrt(np.sum(coeff ** 2 * node_sigma ** 2)))
    return GibbsReport(value=value, value_plain=value_plain,
                       difference=value - value_plain, sigma=sigma,
                       grid=grid, log_r=log_r)


@dataclass(frozen=True)
class CorrectedPotential:
    """Ground surface plus the temperature-dependent gap-trace correction."""

    grid: np.ndarray
    values: np.ndarray
    T: float
    trace_coefficient: float
    diagnostics: dict
    _model: object = field(repr=False, default=None)

    def potential(self, X):
        lam = espec.eigen_at(self._model, X)[0]
        gaps = lam[1:] - lam[0]
        return float(lam[0] + self.trace_coefficient * self.T * np.sum(np.log(gaps)))

    def force(self, X):
        from . import model as model_mod

        x = float(np.atleast_1d(X)[0])
        lam, vec = espec.eigen_at(self._model, x)
        dV = model_mod.potential_derivative(self._model, x)
        forces = np.einsum("jn,jk,kn->n", vec, dV, vec)
        gaps = lam[1:] - lam[0]
        dgaps = forces[1:] - forces[0]
        extra = self.trace_coefficient * self.T * float(np.sum(dgaps / gaps))
        return np.atleast_1d(-forces[0] - extra)


def corrected_potential(basis, T, trace_coefficient=0.5):
    """lambda_0(X) + coefficient * T * sum_{n>0} log gap_n(X) on the basis grid.

    The default coefficient 1/2 gives the half-trace form lambda_0 +
    (T/2) sum log gap_n; coefficient 1.0 matches the drift of the sampled
    sphere ensemble.  Returns the grid field, a force callable (analytic
    log-derivative on Hellmann-Feynman forces), and the weak-gap diagnostics
    (max T/gap_1, max sum |dgap|/gap, max sum |dgap| gap^-2 log(1/gap)).
    """
    model = basis.model
    if model.d < 2:
        raise ValueError("corrected_potential needs excited levels (d >= 2)")
    gaps = basis.gaps[:, 1:]
    if gaps.min() <= 0.0:
        raise CrossingError("crossing on the grid: log correction diverges")
    values = basis.lambdas[:, 0] + trace_coefficient * T * np.sum(np.log(gaps), axis=1)
    dgaps = np.empty_like(gaps)
    for i, x in enumerate(basis.grid):
        dgaps[i] = espec.gap_derivatives(model, x)[1]
    diag = {
        "t_over_gap": float(np.max(T / gaps[:, 0])),
        "trace_ratio": float(np.max(np.sum(np.abs(dgaps) / gaps, axis=1))),
        "weak_kappa": float(np.max(np.sum(np.abs(dgaps) / gaps ** 2
                                          * np.log(1.0 / gaps), axis=1))),
    }
    return CorrectedPotential(grid=basis.grid.copy(), values=values, T=float(T),
                              trace_coefficient=float(trace_coefficient),
                              diagnostics=diag, _model=model)


@dataclass(frozen=True)
class EquilibriumReport:
    gibbs_value: float
    gibbs_plain: float
    gibbs_sigma: float
    kappa: float
    scheme_values: dict
    scheme_errors: dict
    differences: dict
    passes: dict
    seed: int


def equilibrium_compare(model, g, T, schemes=("langevin", "smoluchowski"),
                        budget=200_000, dt=0.05, rng=None, seed=0, K=None,
                        n_grid=65, n_samples=20000, burn_frac=0.1, force=None):
    """Long-run stochastic averages of g against the Gibbs quadrature.

    Passes when |difference| <= kappa + 3 * combined MC error, with kappa
    minimized over anchor points as in the gap-flatness condition.
    """
    if K is None:
        K = model.K
    master = seed
    report = gibbs_observable(model, g, T, n_grid=n_grid, n_samples=n_samples,
                              rng=stream_rng(master, 1))
    if model.d > 1:
        basis = espec.eigendecompose_field(model, periodic_grid(model.L, 129))
        kap = min(espec.kappa(basis, (0.0, model.L * (1.0 - 1e-9)), xc, T=T)[0]
                  for xc in np.linspace(0.0, model.L * 0.9, 7))
    else:
        kap = 0.0
    values, errors, diffs, passes = {}, {}, {}, {}
    for j, scheme in enumerate(schemes):
        rng_s = stream_rng(master, 10 + j)
        init = dynamics.PhaseState.make(model.L / 3.0, 0.0)
        traj = dynamics.simulate(model, init, scheme, T_final=budget * dt, dt=dt,
                                 rng=rng_s, T=T, K=K, force=force,
                                 record_every=max(1, budget // 100_000))
        mean, err = dynamics.time_average(traj, g, burn_in=burn_frac * budget * dt)
        values[scheme] = mean
        errors[scheme] = err
        diffs[scheme] = mean - report.value
        passes[scheme] = abs(diffs[scheme]) <= kap + 3.0 * np.hypot(err, report.sigma)
    return EquilibriumReport(gibbs_value=report.value, gibbs_plain=report.value_plain,
                             gibbs_sigma=report.sigma, kappa=float(kap),
                             scheme_values=values, scheme_errors=errors,
                             differences=diffs, passes=passes, seed=seed)

"""Experiment orchestration: convergence harness, rate fitting, run records.

The convergence harness matches a quantized classical energy to the nearest
exact eigenvalue at each mass, compares quantum and trajectory observables,
and fits the decay exponent of the error on a log-log scale.  Run records
hold everything needed for a bit-identical replay.
"""

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import dynamics, espec, qref, wkb
from . import model as model_mod
from .errors import CausticError
from ._util import periodic_grid

__all__ = [
    "RunRecord",
    "default_observables",
    "fit_rate",
    "converge",
    "replay",
    "symplectic_perturbation_study",
]


def default_observables(L):
    """The three position observables of the error metric."""
    w = 2.0 * np.pi / L

    def half_indicator(x):
        # smoothed indicator of the half torus, C-infinity periodic
        return 0.5 * (1.0 + np.tanh(3.0 * np.sin(w * x)))

    return {
        "cos": lambda x: np.cos(w * x),
        "sin": lambda x: np.sin(w * x),
        "half": half_indicator,
    }


def fit_rate(points, weights=None):
    """Least squares of log(error) against log(M); alpha is the negated slope.

    Returns (alpha, stderr, intercept).
    """
    points = [(float(m), float(e)) for m, e in points]
    if len(points) < 3:
        raise ValueError("rate fitting needs at least 3 points")
    if any(e <= 0.0 for _, e in points):
        raise ValueError("errors must be positive on a log scale")
    x = np.log([m for m, _ in points])
    y = np.log([e for _, e in points])
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    W = np.diag(w)
    A = np.column_stack([x, np.ones_like(x)])
    cov = np.linalg.inv(A.T @ W @ A)
    slope, intercept = cov @ (A.T @ W @ y)
    resid = y - (slope * x + intercept)
    dof = max(len(x) - 2, 1)
    s2 = float(resid @ (w * resid)) / dof
    stderr = float(np.sqrt(s2 * cov[0, 0]))
    return float(-slope), stderr, float(intercept)


@dataclass
class RunRecord:
    """Everything needed to reproduce a convergence run bit-for-bit."""

    config: str                  # ModelSpec JSON snapshot
    scheme: str
    master_seed: int
    M_list: list
    e_ref: float
    n_loops: int
    dt_rule: str
    per_M: list                  # one dict per mass
    alpha: float = None
    alpha_stderr: float = None
    intercept: float = None
    floor_limited: bool = False
    pre_asymptotic: bool = False
    observable_names: list = field(default_factory=list)
    wall_times: dict = field(default_factory=dict)
    version: str = "qcmd-0.1.0"

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def comparable(self):
        """The replay-stable payload (wall times excluded)."""
        data = asdict(self)
        data.pop("wall_times")
        return data


def _bo_dt(M):
    return 1e-3


def _ehrenfest_dt(M, c_step=0.1):
    return min(c_step / np.sqrt(M), 1e-3)


def _launch_point(model):
    """Start trajectories where the first gap is widest (away from crossings)."""
    if model.d == 1:
        return 0.0
    grid = np.linspace(0.0, model.L * (1.0 - 1e-12), 257)
    lam = espec.eigenvalues_along(model, grid)
    return float(grid[np.argmax(lam[:, 1] - lam[:, 0])])


def _classical_observables(model, scheme, E, observables, M, n_loops, X0,
                           cycle_len=1, perp_correction=False):
    """Averages over n_loops full periods of the adiabatic loop.

    One full period is ``cycle_len`` returns to the launch surface (a loop
    through a crossing closes only after visiting every branch of its cycle).
    """
    lam0 = espec.eigen_at(model, X0)[0][0]
    p0 = np.sqrt(2.0 * (E - lam0))
    phi0 = espec.eigen_at(model, X0)[1][:, 0].astype(complex)
    if scheme == "ehrenfest":
        dt = _ehrenfest_dt(M)
        phi0 = dynamics.initial_electron_state(model, X0, p0, M,
                                               perp_correction=perp_correction)
    elif scheme == "bo":
        dt = _bo_dt(M)
        if model.d == 1:
            phi0 = None
    else:
        raise ValueError("convergence harness drives deterministic schemes only")
    init = dynamics.PhaseState.make(X0, p0, phi=phi0)
    n_hits = n_loops * cycle_len
    t_loop = model.L / p0
    traj = dynamics.simulate(model, init, scheme, T_final=4.0 * n_hits * t_loop,
                             dt=dt, surface=X0, M=M, max_hits=n_hits)
    out, scatter = {}, {}
    taus = np.array([traj.t[0]] + [h.tau for h in traj.hits])
    circuit_dur = np.diff(taus)
    for name, g in observables.items():
        out[name] = dynamics.loop_average(traj, g, n_hits)
        per_circuit = np.asarray(dynamics.per_loop_averages(traj, g, n_hits))
        # aggregate circuits into full periods, duration-weighted
        periods = []
        for j in range(len(per_circuit) // cycle_len):
            sl = slice(j * cycle_len, (j + 1) * cycle_len)
            periods.append(np.average(per_circuit[sl], weights=circuit_dur[sl]))
        scatter[name] = float(np.std(periods, ddof=1) / np.sqrt(len(periods))
                              if len(periods) > 1 else 0.0)
    return out, scatter, traj


def _lowpass_similarity(rho_a, rho_b, n_modes=8):
    """Cosine similarity of densities after dropping fast Fourier modes.

    Standing-wave densities oscillate at the fast scale; the slow envelope is
    what identifies the underlying loop.
    """
    fa = np.fft.rfft(rho_a)[:n_modes + 1]
    fb = np.fft.rfft(rho_b)[:n_modes + 1]
    num = float(np.real(np.vdot(fa, fb)))
    return num / (np.linalg.norm(fa) * np.linalg.norm(fb))


def _matched_eigenstates(model, M, e_ref, loop_mu, floor_lam, observables,
                         count, k_spread, doublet_average, n_grid_cap,
                         index_offset=0.0):
    """Solve once near the energy window and match k_spread quantized states.

    Candidates for each quantization index must lie within half a loop-level
    spacing of the semiclassical energy and are ranked by the low-pass
    similarity of their density to the loop density sum over branches of 1/p;
    interleaved states of other character (trapped wells, other loops) are
    thereby excluded.  Near-degenerate partners of the winner are averaged.
    """
    L = model.L
    k0 = max(1, round(wkb.profile_action(loop_mu, L, e_ref)
                      * np.sqrt(M) / (2.0 * np.pi) - index_offset))
    k_list = [k0 + j for j in range(k_spread)]
    E_list = [wkb.quantized_energy_from_profiles(loop_mu, L, k, M,
                                                 index_offset=index_offset)
              for k in k_list]
    e_kin = max(E_list) - floor_lam
    n_need = qref.required_grid(L, e_kin, M)
    n_grid = 1 << int(np.ceil(np.log2(n_need)))
    if n_grid_cap is not None:
        n_grid = min(n_grid, n_grid_cap)
    H = qref.assemble_hamiltonian(model, M, n_grid,
                                  e_max=None if n_grid_cap else e_kin)
    E_mid = 0.5 * (min(E_list) + max(E_list))
    pairs = qref.eigensolve_near(H, E_mid, count=count + 6 * (k_spread - 1))
    branch_fine = espec.smooth_branches(model, H.grid)
    cycle_fine = branch_fine.cycle_of(0)
    states = []
    for k, E_bs in zip(k_list, E_list):
        # loop-level spacing from the action derivative dA/dE = sum int dX/p
        dAdE = wkb.profile_action(loop_mu, L, E_bs + 5e-7) / 1.0
        dAdE = (dAdE - wkb.profile_action(loop_mu, L, E_bs - 5e-7)) / 1e-6
        spacing = 2.0 * np.pi / (np.sqrt(M) * dAdE)
        with np.errstate(invalid="ignore"):
            rho_cl = np.sum(1.0 / np.sqrt(np.maximum(
                2.0 * (E_bs - branch_fine.mu[:, cycle_fine]), 1e-12)), axis=1)
        cand = [p for p in pairs if abs(p.E - E_bs) <= 0.6 * spacing]
        if not cand:
            cand = sorted(pairs, key=lambda p: abs(p.E - E_bs))[:2]
        sims = [_lowpass_similarity(p.density, rho_cl) for p in cand]
        best = int(np.argmax(sims))
        cluster = [cand[best]]
        if doublet_average:
            for j, p in enumerate(cand):
                if (j != best and sims[j] >= 0.995 * sims[best]
                        and abs(p.E - cand[best].E) < 0.05 * spacing):
                    cluster.append(p)
        q_obs = {name: float(np.mean([qref.observable(p.density, g, H.grid)
                                      for p in cluster]))
                 for name, g in observables.items()}
        states.append({"k": int(k), "E_bs": float(E_bs),
                       "E_q": float(np.mean([p.E for p in cluster])),
                       "n_cluster": len(cluster),
                       "similarity": float(sims[best]), "quantum": q_obs})
    return {"k": int(k0), "E_bs": float(E_list[0]), "n_grid": int(n_grid),
            "states": states}


def converge(model, scheme, M_list, observables=None, e_ref=None, n_loops=8,
             seed=0, count=16, k_spread=1, energy_window=None,
             doublet_average=True, cache=None, n_grid_cap=None,
             perp_correction=False, workers=1):
    """Measure the observable error against the exact reference over a mass sweep.

    Per mass: quantize the energy in a fixed window, solve the eigenproblem
    near it, run the matched trajectory, and difference the observables; the
    caustic certificate must be empty for every mass.  ``k_spread`` adjacent
    quantized states are measured and their absolute errors averaged, which
    smooths the state-to-state oscillation of the error constant.  With
    ``energy_window`` set, all states in a fixed microcanonical window are
    compared instead and the signed errors are averaged, which also cancels
    the oscillating component.  Returns a RunRecord with the fitted exponent.
    """
    if observables is None:
        observables = default_observables(model.L)
    # smooth continuation of the adiabatic levels: the ground branch may close
    # only after visiting several sorted levels (label swaps at crossings)
    branch = espec.smooth_branches(model, periodic_grid(model.L, 512))
    cycle = branch.cycle_of(0)
    X0 = float(branch.grid[branch.start])
    loop_mu = branch.mu[:, cycle].T
    index_offset = 0.25 * branch.crossing_passes(cycle)
    floor_lam = float(branch.mu.min())
    # the energy window must clear every surface in the loop, else the loop
    # states hybridize with trapped (caustic) states and no single-mode
    # eigenstate exists near E
    barrier = float(loop_mu.max())
    if e_ref is None:
        e_ref = barrier + 0.5 * max(1.0, barrier - floor_lam)
    record = RunRecord(config=model.spec().to_json(), scheme=scheme,
                       master_seed=seed, M_list=[float(m) for m in M_list],
                       e_ref=float(e_ref), n_loops=n_loops,
                       dt_rule="bo: 1e-3; ehrenfest: min(0.1/sqrt(M), 1e-3)",
                       per_M=[], observable_names=sorted(observables))
    cache = {} if cache is None else cache
    basis_probe = espec.eigendecompose_field(
        model, np.linspace(0.0, model.L * (1 - 1e-12), 65))

    def run_cell(M):
        t0 = time.perf_counter()
        k_spread_M = k_spread
        count_M = count
        if energy_window is not None:
            dAdE = (wkb.profile_action(loop_mu, model.L, e_ref + 5e-7)
                    - wkb.profile_action(loop_mu, model.L, e_ref - 5e-7)) / 1e-6
            spacing = 2.0 * np.pi / (np.sqrt(M) * dAdE)
            k_spread_M = int(np.clip(round(energy_window / spacing), 4, 40))
            k_spread_M += k_spread_M % 2
            count_M = k_spread_M + 12
        key = (model.spec().to_json(), float(M), float(e_ref), count_M,
               k_spread_M, doublet_average)
        if key in cache:
            quantum = cache[key]
        else:
            quantum = _matched_eigenstates(model, M, e_ref, loop_mu, floor_lam,
                                           observables, count_M, k_spread_M,
                                           doublet_average, n_grid_cap,
                                           index_offset=index_offset)
            cache[key] = quantum
        per_k_errors = []
        caustics = []
        crossings = []
        c_means, c_sigmas = {}, {}
        for sel in quantum["states"]:
            # caustic certificate at the matched energy, on every loop surface
            for mu_j in loop_mu:
                p_sq = 2.0 * (sel["E_q"] - mu_j)
                caustics += [float(x) for x in branch.grid[p_sq <= wkb.EPS_CAUSTIC]]
            if caustics:
                raise CausticError(f"caustics at M = {M}: {caustics}")
            c_obs, c_scatter, traj = _classical_observables(
                model, scheme, sel["E_q"], observables, M, n_loops, X0,
                cycle_len=len(cycle), perp_correction=perp_correction)
            if model.d > 1 and not crossings:
                crossings = [
                    {"sigma": ev.sigma, "X": ev.X_sigma, "level": ev.level,
                     "slope": ev.slope, "degenerate": ev.degenerate}
                    for ev in espec.detect_crossings(basis_probe, traj)
                ]
            errs = {name: sel["quantum"][name] - c_obs[name]
                    for name in observables}
            per_k_errors.append((errs, c_scatter))
            c_means, c_sigmas = c_obs, c_scatter
        # average the per-state errors: the error constant oscillates from
        # state to state, the rate is carried by the envelope (mean absolute
        # error) or, over a microcanonical window, by the signed mean resolved
        # at its own noise level
        spread_sigma = {name: float(np.std([e[name] for e, _ in per_k_errors], ddof=1)
                                    / np.sqrt(len(per_k_errors)))
                        if len(per_k_errors) > 1 else 0.0
                        for name in observables}
        if energy_window is not None:
            errors = {name: float(np.hypot(np.mean([e[name] for e, _ in per_k_errors]),
                                           spread_sigma[name]))
                      for name in observables}
        else:
            errors = {name: float(np.mean([np.abs(e[name]) for e, _ in per_k_errors]))
                      for name in observables}
        top = max(errors, key=errors.get)
        if len(per_k_errors) > 1:
            sigma_top = spread_sigma[top]
        else:
            sigma_top = float(np.mean([s[top] for _, s in per_k_errors]))
        entry = {
            "M": float(M), "k": quantum["k"], "E_bs": quantum["E_bs"],
            "n_grid": quantum["n_grid"],
            "E_q": quantum["states"][0]["E_q"],
            "n_cluster": quantum["states"][0]["n_cluster"],
            "similarity": quantum["states"][0]["similarity"],
            "quantum": quantum["states"][0]["quantum"],
            "classical": c_means, "errors": errors, "error": errors[top],
            "error_sigma": sigma_top, "scatter": c_sigmas,
            "k_spread": len(quantum["states"]),
            "caustics": caustics, "crossings": crossings,
        }
        return entry, time.perf_counter() - t0

    # fan the (M, scheme) cells out to a worker pool; cells share nothing
    # mutable except the memo cache, and results merge by cell index
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run_cell, M_list))
    else:
        cells = [run_cell(M) for M in M_list]
    for M, (entry, wall) in zip(M_list, cells):
        record.per_M.append(entry)
        record.wall_times[str(M)] = wall
    floor = 1e-9
    points = [(e["M"], max(e["error"], floor)) for e in record.per_M]
    record.floor_limited = all(e["error"] < 100.0 * floor for e in record.per_M)
    if len(points) >= 3:
        # weight each point by its measured relative uncertainty (2% floor)
        weights = []
        for e in record.per_M:
            rel = e["error_sigma"] / max(e["error"], floor)
            weights.append(1.0 / (rel ** 2 + 0.02 ** 2))
        alpha, stderr, intercept = fit_rate(points, weights=weights)
        record.alpha, record.alpha_stderr, record.intercept = alpha, stderr, intercept
        x = np.log([m for m, _ in points])
        y = np.log([e for _, e in points])
        resid = y - (-alpha * x + intercept)
        record.pre_asymptotic = bool(np.max(np.abs(resid)) > 0.7)
    return record


def replay(record):
    """Re-run a record from its config snapshot; numbers must match bit-for-bit."""
    spec = model_mod.ModelSpec.from_json(record.config)
    model = model_mod.build_model(spec)
    return converge(model, record.scheme, record.M_list,
                    e_ref=record.e_ref, n_loops=record.n_loops,
                    seed=record.master_seed)


def symplectic_perturbation_study(model, scheme, dt_list, M=4096.0, e_ref=None,
                                  n_loops=4, seed=0, cache=None):
    """Observable error against dt at fixed mass, on top of the mass floor.

    Also integrates symplectic Euler on the matched grid and reports the
    maximum position deviation from Verlet (the two share positions when the
    Euler momenta start half a kick behind).
    """
    if scheme != "bo":
        raise ValueError("the dt study drives the Verlet ground-surface scheme")
    observables = default_observables(model.L)
    rec = converge(model, scheme, [M], observables=observables, e_ref=e_ref,
                   n_loops=n_loops, seed=seed, cache=cache)
    E_q = rec.per_M[0]["E_q"]
    quantum = rec.per_M[0]["quantum"]
    X0 = _launch_point(model)
    lam0 = espec.eigen_at(model, X0)[0][0]
    p0 = np.sqrt(2.0 * (E_q - lam0))
    t_loop = model.L / p0
    dt_list = sorted(float(dt) for dt in dt_list)
    values = {}
    euler_max_dev = 0.0
    for dt in dt_list:
        init = dynamics.PhaseState.make(X0, p0)
        traj = dynamics.simulate(model, init, "bo", T_final=3.0 * n_loops * t_loop,
                                 dt=dt, surface=X0, max_hits=n_loops)
        values[dt] = {name: dynamics.loop_average(traj, g, n_loops)
                      for name, g in observables.items()}
        # symplectic Euler with momenta shifted half a kick behind Verlet
        f0 = espec.ground_force(model, X0)
        st = dynamics.PhaseState.make(X0, p0 - 0.5 * dt * f0)
        dev = 0.0
        n_cmp = min(200, traj.t.size - 1)
        for i in range(n_cmp):
            st = dynamics.step_symplectic_euler(model, st, dt)
            dev = max(dev, abs(st.X[0] - traj.X[i + 1, 0]))
        euler_max_dev = max(euler_max_dev, dev)
    # isolate the additive dt term by self-convergence against the finest step
    dt_ref = dt_list[0]
    entries = []
    for dt in dt_list:
        dt_effect = max(abs(values[dt][n] - values[dt_ref][n]) for n in observables)
        total = max(abs(values[dt][n] - quantum[n]) for n in observables)
        entries.append({"dt": dt, "dt_effect": float(dt_effect),
                        "error": float(total)})
    floor = max(abs(values[dt_ref][n] - quantum[n]) for n in observables)
    fit_pts = [(1.0 / e["dt"], e["dt_effect"]) for e in entries
               if e["dt"] > dt_ref and e["dt_effect"] > 1e-12]
    slope = None
    if len(fit_pts) >= 3:
        alpha, stderr, _ = fit_rate(fit_pts)
        slope = {"q": alpha, "stderr": stderr}
    return {
        "M": float(M), "E_q": float(E_q), "entries": entries,
        "floor": float(floor), "dt_fit": slope,
        "euler_verlet_max_position_dev": float(euler_max_dev),
        "mass_record": rec,
    }

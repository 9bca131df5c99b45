import numpy as np
import pytest

from qcmd import ModelSpec, build_model, lab


def test_fit_rate_exact_power_laws():
    for alpha_true in (1.0, 0.5):
        pts = [(M, 3.7 * M ** (-alpha_true)) for M in (64, 256, 1024, 4096)]
        alpha, stderr, intercept = lab.fit_rate(pts)
        assert abs(alpha - alpha_true) < 1e-12
        assert stderr < 1e-12
        assert abs(np.exp(intercept) - 3.7) < 1e-10


def test_fit_rate_with_multiplicative_noise():
    rng = np.random.default_rng(0)
    hits = 0
    for trial in range(20):
        pts = [(M, 2.0 * M ** (-1.0) * (1.0 + 0.1 * rng.standard_normal()))
               for M in (64, 256, 1024, 4096, 16384)]
        alpha, _, _ = lab.fit_rate(pts)
        hits += abs(alpha - 1.0) < 0.1
    assert hits >= 18


def test_fit_rate_input_validation():
    with pytest.raises(ValueError):
        lab.fit_rate([(64, 1.0), (256, 0.5)])
    with pytest.raises(ValueError):
        lab.fit_rate([(64, 1.0), (256, 0.0), (1024, 0.1)])


def test_default_observables_periodic():
    obs = lab.default_observables(2 * np.pi)
    x = np.linspace(0, 2 * np.pi, 64)
    for g in obs.values():
        assert np.allclose(g(x), g(x + 2 * np.pi), atol=1e-12)


def test_converge_free_is_floor_limited():
    m = build_model(ModelSpec(family="free"))
    rec = lab.converge(m, "bo", [64.0, 256.0, 1024.0], n_loops=2)
    assert rec.floor_limited
    for e in rec.per_M:
        assert e["error"] < 1e-7
        assert e["caustics"] == []


def test_converge_gap_smoke_and_record_roundtrip():
    m = build_model(ModelSpec(family="two_level_gap", params={"delta": 0.25}, d=2))
    obs = {"cos2": lambda x: np.cos(2 * x)}
    rec = lab.converge(m, "bo", [64.0, 256.0, 1024.0], observables=obs, n_loops=4)
    assert 0.5 < rec.alpha < 1.6
    text = rec.to_json()
    again = lab.RunRecord.from_json(text)
    assert again.comparable() == rec.comparable()


def test_replay_is_bit_identical():
    m = build_model(ModelSpec(family="two_level_gap", params={"delta": 0.25}, d=2))
    rec = lab.converge(m, "bo", [64.0, 256.0], n_loops=2, seed=5)
    rec2 = lab.replay(rec)
    assert rec.comparable() == rec2.comparable()


def test_worker_pool_merge_is_deterministic():
    m = build_model(ModelSpec(family="two_level_gap", params={"delta": 0.25}, d=2))
    obs = {"cos2": lambda x: np.cos(2 * x)}
    seq = lab.converge(m, "bo", [64.0, 256.0, 1024.0], observables=obs, n_loops=2)
    par = lab.converge(m, "bo", [64.0, 256.0, 1024.0], observables=obs, n_loops=2,
                       workers=3)
    assert seq.comparable() == par.comparable()


def test_symplectic_study_verlet_slope_and_euler_positions():
    m = build_model(ModelSpec(family="scalar_cos", params={"a": 0.1}))
    out = lab.symplectic_perturbation_study(m, "bo", [2e-1, 1e-1, 5e-2, 2.5e-2, 1e-3],
                                            M=1024.0, n_loops=2)
    assert out["dt_fit"] is not None
    assert abs(out["dt_fit"]["q"] - 2.0) < 0.2
    # symplectic Euler positions coincide with Verlet's on matched grids
    assert out["euler_verlet_max_position_dev"] < 1e-10
    # dt -> 0: the total error plateaus at the mass floor
    total_small = [e["error"] for e in out["entries"] if e["dt"] <= 2.5e-2]
    assert max(total_small) <= 3.0 * out["floor"] + 1e-12

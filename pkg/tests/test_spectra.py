import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsb.core import GroundTruth, GroupStructure, Problem
from gsb.solver import SolverConfig, solve_group_lasso
from gsb.spectra import (
    EnumerationCapError,
    RankDeficientGroupError,
    cone_condition_check,
    corollary_cs_check,
    corollary_even_check,
    g_ell,
    group_rho,
    group_rip_certify,
    group_rip_sample_bound,
    group_rip_sample_bound_value,
    lambda_minus_sq,
    lemma_a2_gap,
    noise_projection_norm,
    rho_bounds_on_set,
    spectral_summary,
    theorem1_check,
    verify_noise_bound_monte_carlo,
)


def scaled_orthonormal(n, p, seed):
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, p)))
    return math.sqrt(n) * Q


def brute_rho(X, structure, s):
    gram = X.T @ X / X.shape[0]
    lo, hi = math.inf, 0.0
    for r in range(1, structure.m + 1):
        for S in itertools.combinations(range(structure.m), r):
            idx = structure.union(S)
            if idx.size > s:
                continue
            w = np.linalg.eigvalsh(gram[np.ix_(idx, idx)])
            lo, hi = min(lo, max(w[0], 0.0)), max(hi, w[-1])
    return lo, hi


# rho ----------------------------------------------------------------------


def test_rho_isometry():
    X = math.sqrt(6) * np.eye(6)
    assert rho_bounds_on_set(X, [0, 3, 5]) == pytest.approx((1.0, 1.0))


def test_rho_duplicated_column():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 4))
    X[:, 3] = X[:, 1]
    lo, hi = rho_bounds_on_set(X, [1, 3])
    assert lo == pytest.approx(0.0, abs=1e-12) and hi > 0


def test_rho_matches_sphere_sampling():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((8, 4))
    v = rng.standard_normal((1_000_000, 4))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    q = np.sum((v @ X.T) ** 2, axis=1) / 8
    lo, hi = rho_bounds_on_set(X, range(4))
    assert abs(lo - q.min()) <= 1e-3
    assert abs(hi - q.max()) <= 1e-3


def test_rho_rejects_bad_sets():
    X = np.eye(3)
    with pytest.raises(ValueError):
        rho_bounds_on_set(X, [])
    with pytest.raises(ValueError):
        rho_bounds_on_set(X, [3])


def test_group_rho_orthonormal_is_one():
    X = scaled_orthonormal(20, 8, 2)
    st_ = GroupStructure.from_sizes([1, 3, 4])
    for s in range(1, 9):
        assert group_rho(X, st_, s) == pytest.approx((1.0, 1.0))


def test_group_rho_two_groups_by_hand():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((12, 5))
    st_ = GroupStructure.from_sizes([2, 3])
    sets = {2: [[0, 1]], 3: [[0, 1], [2, 3, 4]], 5: [[0, 1], [2, 3, 4], range(5)]}
    for s, Fs in sets.items():
        vals = [rho_bounds_on_set(X, F) for F in Fs]
        assert group_rho(X, st_, s) == pytest.approx((min(v[0] for v in vals), max(v[1] for v in vals)))


@pytest.mark.parametrize("seed", range(4))
def test_group_rho_matches_brute_force(seed):
    rng = np.random.default_rng(10 + seed)
    sizes = rng.integers(1, 4, size=6).tolist()
    st_ = GroupStructure.from_sizes(sizes)
    X = rng.standard_normal((9, st_.p))
    for s in range(min(sizes), st_.p + 1):
        assert group_rho(X, st_, s) == pytest.approx(brute_rho(X, st_, s), abs=1e-12)


def test_group_rho_monotone_in_s():
    rng = np.random.default_rng(4)
    st_ = GroupStructure.from_sizes([1, 2, 2, 3, 1, 4])
    X = rng.standard_normal((10, st_.p))
    summ = spectral_summary(X, st_, range(1, st_.p + 1))
    lo = [summ.rho_minus_by_s[s] for s in range(1, st_.p + 1)]
    hi = [summ.rho_plus_by_s[s] for s in range(1, st_.p + 1)]
    assert all(a >= b - 1e-15 for a, b in zip(lo, lo[1:]))
    assert all(a <= b + 1e-15 for a, b in zip(hi, hi[1:]))
    assert all(0 <= a <= b for a, b in zip(lo, hi))


def test_group_rho_cap():
    st_ = GroupStructure.even(40, 1)
    with pytest.raises(EnumerationCapError, match="smaller instance"):
        group_rho(np.eye(40), st_, 20, cap=1000)


def test_group_rho_rejects_s_below_smallest_group():
    with pytest.raises(ValueError):
        group_rho(np.eye(4), GroupStructure.even(4, 2), 1)


# g_ell and lambda_minus ---------------------------------------------------


def test_g_ell_examples():
    assert g_ell(GroupStructure.even(16, 4), 9) == 3
    assert g_ell(GroupStructure.from_sizes([1, 2, 8]), 9) == 2
    assert g_ell(GroupStructure.from_sizes([1, 2, 8]), 1) == 1
    assert g_ell(GroupStructure.from_sizes([1, 2, 8]), 0) == 0


def test_lambda_minus_sq_examples():
    st_ = GroupStructure.from_sizes([1, 3])
    assert lambda_minus_sq(st_, np.sqrt([5.0, 1.0]), 2) == pytest.approx(1.0)
    assert lambda_minus_sq(st_, np.sqrt([5.0, 1.0]), 0) == 0.0
    even = GroupStructure.even(12, 3)
    assert lambda_minus_sq(even, np.full(4, 0.7), 6) == pytest.approx(2 * 0.49)


sizes_strategy = st.lists(st.integers(1, 5), min_size=1, max_size=10)


@settings(max_examples=60, deadline=None)
@given(sizes_strategy, st.data())
def test_g_ell_and_lambda_minus_match_brute_force(sizes, data):
    st_ = GroupStructure.from_sizes(sizes)
    ell = data.draw(st.integers(1, st_.p))
    lam = np.array(data.draw(st.lists(st.floats(0, 3), min_size=st_.m, max_size=st_.m)))
    best_g, best_l = math.inf, math.inf
    for r in range(1, st_.m + 1):
        for S in itertools.combinations(range(st_.m), r):
            if sum(sizes[j] for j in S) >= ell:
                best_g = min(best_g, r)
                best_l = min(best_l, float(sum(lam[j] ** 2 for j in S)))
    assert g_ell(st_, ell) == best_g
    assert lambda_minus_sq(st_, lam, ell) == pytest.approx(best_l, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=2, max_size=10), st.data())
def test_merging_groups_never_raises_g_ell(sizes, data):
    st_ = GroupStructure.from_sizes(sizes)
    ell = data.draw(st.integers(1, st_.p))
    merged = GroupStructure.from_sizes([sizes[0] + sizes[1]] + sizes[2:])
    assert g_ell(merged, ell) <= g_ell(st_, ell)


# noise projection ---------------------------------------------------------


def test_noise_projection_examples():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((10, 5))
    st_ = GroupStructure.from_sizes([2, 3])
    assert noise_projection_norm(X, st_, 0, np.zeros(10)) == 0.0
    Xg = X[:, :2]
    eps = rng.standard_normal(10)
    eps -= Xg @ np.linalg.lstsq(Xg, eps, rcond=None)[0]
    assert noise_projection_norm(X, st_, 0, eps) == pytest.approx(0.0, abs=1e-12)
    u = rng.standard_normal(3)
    w, V = np.linalg.eigh(X[:, 2:].T @ X[:, 2:])
    expected = np.linalg.norm((V * np.sqrt(w)) @ V.T @ u)
    assert noise_projection_norm(X, st_, 1, X[:, 2:] @ u) == pytest.approx(expected, rel=1e-10)


def test_noise_projection_rank_deficient():
    X = np.ones((6, 3))
    with pytest.raises(RankDeficientGroupError, match="group 1"):
        noise_projection_norm(X, GroupStructure.from_sizes([2, 1]), 0, np.ones(6))


def test_noise_monte_carlo_sigma_zero():
    rep = verify_noise_bound_monte_carlo(20, [1, 4], 0.0, [0.5, 0.1], trials=500, seed=0)
    assert all(r == 0.0 for v in rep.exceedance.values() for r in v.values())


def test_noise_monte_carlo_singleton_chi_oracle():
    trials = 20_000
    rep = verify_noise_bound_monte_carlo(30, [1], 1.0, [1.0, 0.05], trials=trials, seed=1)
    # statistic is |N(0,1)|; threshold at eta=0.05 is 1 + sqrt(2 ln 20) ~ 3.45
    assert rep.exceedance[1][0.05] <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / trials)
    # eta = 1 uses sigma sqrt(k) = 1: P(|Z| > 1) ~ 0.3173
    assert rep.exceedance[1][1.0] == pytest.approx(0.3173, abs=0.02)


def test_noise_monte_carlo_deterministic():
    a = verify_noise_bound_monte_carlo(20, [2], 1.0, [0.5], trials=1000, seed=7, chunk=300)
    b = verify_noise_bound_monte_carlo(20, [2], 1.0, [0.5], trials=1000, seed=7, chunk=1000)
    assert a.exceedance == b.exceedance


# RIP ----------------------------------------------------------------------


def test_rip_isometry_holds():
    X = math.sqrt(16) * np.eye(16)
    cert = group_rip_certify(X, GroupStructure.even(16, 4), 2, 8, 0.01)
    assert cert.holds and cert.sigma_min == pytest.approx(1.0) and cert.sigma_max == pytest.approx(1.0)


def test_rip_duplicate_columns_fail():
    X = math.sqrt(16) * np.eye(16)
    X[:, 1] = X[:, 0]
    cert = group_rip_certify(X, GroupStructure.even(16, 4), 1, 4, 0.99)
    assert not cert.holds and cert.worst_subset == [0]
    assert cert.sigma_min == pytest.approx(0.0, abs=1e-7)


def test_rip_monotone_in_delta():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((40, 16))
    st_ = GroupStructure.even(16, 2)
    held = [group_rip_certify(X, st_, 3, 6, d).holds for d in np.linspace(0.05, 0.95, 19)]
    assert held == sorted(held)


def test_sample_bound_value():
    assert group_rip_sample_bound_value(2, 8, 16, 0.5, 2.3) == pytest.approx(1031.1424679832803, rel=1e-12)
    assert group_rip_sample_bound(2, 8, 16, 0.5, 2.3) == 1032


def test_sample_bound_linear_in_k():
    d = 0.3
    diff = group_rip_sample_bound_value(2, 16, 16, d, 1.0) - group_rip_sample_bound_value(2, 8, 16, d, 1.0)
    assert diff == pytest.approx(8 / d**2 * 8 * math.log(1 + 8 / d), rel=1e-12)


def test_sample_bound_decreasing_in_delta():
    vals = [group_rip_sample_bound_value(3, 12, 20, d, 1.0) for d in np.linspace(0.05, 0.99, 30)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_sample_bound_domain():
    for args in [(2, 8, 16, 0.0, 1.0), (2, 8, 16, 1.0, 1.0), (2, 8, 16, 0.5, 0.0), (0, 8, 16, 0.5, 1.0), (9, 8, 16, 0.5, 1.0)]:
        with pytest.raises(ValueError):
            group_rip_sample_bound(*args)


# theorem and corollaries --------------------------------------------------


def test_theorem1_orthonormal():
    n, p = 64, 16
    X = scaled_orthonormal(n, p, 7)
    st_ = GroupStructure.even(p, 2)
    beta = np.zeros(p)
    beta[:4] = 1.0
    truth = GroundTruth.from_beta(beta, st_)
    prob = Problem(X, X @ beta, st_)
    res = theorem1_check(prob, truth, A=1.0, B=0.0, s=6, sigma=0.0)
    assert res.c_observed == pytest.approx(0.0, abs=1e-12)
    assert res.conditions_hold and math.isfinite(res.bound_value) and res.bound_value >= 0
    assert res.ell == 6 - (4 - 2) + 1
    # with B = 0 the c^2 condition reduces to ell / (72 k)
    assert res.c_required == pytest.approx(math.sqrt(res.ell / (72 * 4)))


def test_theorem1_scalar_recomputation():
    n, k0 = 64, 2
    rng = np.random.default_rng(8)
    X = rng.standard_normal((n, 32))
    st_ = GroupStructure.even(32, k0)
    beta = np.zeros(32)
    beta[[0, 1, 6, 7]] = rng.standard_normal(4)
    truth = GroundTruth.from_beta(beta, st_)
    sigma = 0.1
    prob = Problem(X, X @ beta, st_)
    A, B, s = 2.0, 1.5, 6
    res = theorem1_check(prob, truth, A, B, s, sigma=sigma)

    k, g = 4, 2
    rm_s, rp_s = brute_rho(X, st_, s)
    rm_2s, _ = brute_rho(X, st_, 2 * s)
    ell = s - (k - k0) + 1
    gl = math.ceil(ell / k0)
    c_req = math.sqrt((ell * A**2 + gl * B**2) / (72 * (k * A**2 + g * B**2)))
    bound = math.sqrt(4.5) / (rm_s * math.sqrt(n)) * (1 + 0.25 / c_req) * math.sqrt(A**2 * k + g * B**2)
    rho_g = max(np.linalg.eigvalsh(X[:, 2 * j:2 * j + 2].T @ X[:, 2 * j:2 * j + 2] / n)[-1] for j in range(16))
    lam_j = (A * math.sqrt(k0) + B) / math.sqrt(n)

    assert (res.ell, res.g_ell) == (ell, gl)
    assert res.rho_minus_s == pytest.approx(rm_s, rel=1e-10)
    assert res.rho_plus_s == pytest.approx(rp_s, rel=1e-10)
    assert res.rho_minus_2s == pytest.approx(rm_2s, rel=1e-10)
    assert res.c_observed == pytest.approx((rp_s - rm_2s) / rm_s, rel=1e-10)
    assert res.c_required == pytest.approx(c_req, rel=1e-12)
    assert res.bound_value == pytest.approx(bound, rel=1e-10)
    assert res.lambda_minus_sq == pytest.approx(gl * lam_j**2, rel=1e-12)
    assert res.A_min == pytest.approx(4 * math.sqrt(rho_g) * sigma, rel=1e-10)
    assert res.B_min == pytest.approx(4 * math.sqrt(rho_g) * math.sqrt(2) * sigma * math.sqrt(math.log(16 / 0.05)), rel=1e-10)
    # a Gaussian 64 x 32 design is far from satisfying the ratio condition
    assert res.c_observed > res.c_required and not res.conditions_hold


def test_theorem1_reports_degenerate_and_clamp():
    X = np.ones((8, 4))
    st_ = GroupStructure.even(4, 1)
    beta = np.array([1.0, 0, 0, 0])
    res = theorem1_check(Problem(X, X @ beta, st_), GroundTruth.from_beta(beta, st_), 1.0, 1.0, 3, sigma=0.0)
    assert not res.conditions_hold
    assert any("degenerate" in r for r in res.reasons)
    assert res.clamped and any("clamped" in r for r in res.reasons)


def test_theorem1_flags_small_s_and_weak_A():
    X = scaled_orthonormal(32, 8, 9)
    st_ = GroupStructure.even(8, 2)
    beta = np.zeros(8)
    beta[:4] = 1
    res = theorem1_check(Problem(X, X @ beta, st_), GroundTruth.from_beta(beta, st_), 0.0, 0.0, 4, sigma=1.0)
    joined = " ".join(res.reasons)
    assert "A=" in joined and "B=" in joined and "s=4" in joined
    assert not res.conditions_hold


def test_corollary_cs_exact_recovery_predicted():
    X = scaled_orthonormal(40, 12, 10)
    st_ = GroupStructure.even(12, 2)
    beta = np.zeros(12)
    beta[2:4] = 1.0
    res = corollary_cs_check(X, st_, GroundTruth.from_beta(beta, st_), delta_a=0.0)
    assert res.holds and res.ratio == pytest.approx(0.0, abs=1e-12)
    assert res.bound_value == 0.0
    assert res.s == 2 * 2 + 2 - 1


def test_corollary_cs_scalar_recomputation():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((30, 10))
    st_ = GroupStructure.even(10, 2)
    beta = np.zeros(10)
    beta[:2] = 1.0
    res = corollary_cs_check(X, st_, GroundTruth.from_beta(beta, st_), delta_a=0.3)
    s = 5
    rm_s, rp_s = brute_rho(X, st_, s)
    rm_2s, _ = brute_rho(X, st_, 2 * s)
    rho_g = max(np.linalg.eigvalsh(X[:, 2 * j:2 * j + 2].T @ X[:, 2 * j:2 * j + 2] / 30)[-1] for j in range(5))
    assert res.ratio == pytest.approx((rp_s - rm_2s) / rm_s, rel=1e-10)
    assert res.bound_value == pytest.approx((6 * math.sqrt(2) + 18) / rm_s * math.sqrt(rho_g) * 0.3 * math.sqrt(2), rel=1e-10)


def test_corollary_cs_equals_theorem_bound_at_its_c():
    X = scaled_orthonormal(40, 24, 12)
    st_ = GroupStructure.even(24, 2)
    beta = np.zeros(24)
    beta[:4] = 1.0
    truth = GroundTruth.from_beta(beta, st_)
    delta_a = 0.05
    cor = corollary_cs_check(X, st_, truth, delta_a)
    # noiseless with B = 0 and A at its minimum (nudged above round-off)
    A = 4 * 1.0 * delta_a * math.sqrt(40) * (1 + 1e-12)
    thm = theorem1_check(Problem(X, X @ beta, st_), truth, A, 0.0, cor.s, a=0.0, b=0.0,
                         delta_a=delta_a, c=1 / math.sqrt(72))
    assert thm.conditions_hold and not thm.clamped
    assert cor.bound_value == pytest.approx(thm.bound_value, rel=1e-9)


def test_corollary_even_orthonormal():
    n = 48
    X = scaled_orthonormal(n, 16, 13)
    st_ = GroupStructure.even(16, 4)
    beta = np.zeros(16)
    beta[:4] = 1.0
    res = corollary_even_check(Problem(X, X @ beta, st_), GroundTruth.from_beta(beta, st_), A=1.0, B=1.0)
    assert res.holds
    ells = [row["ell"] for row in res.table]
    assert ells == [4, 8, 12]
    assert res.bound_value == min(r["bound"] for r in res.table if r["holds"])


def test_corollary_even_rejects_uneven():
    st_ = GroupStructure.from_sizes([1, 2])
    with pytest.raises(ValueError):
        corollary_even_check(Problem(np.eye(3), np.ones(3), st_), GroundTruth.from_beta([1.0, 0, 0], st_), 1.0, 1.0)


# lemma A2 -----------------------------------------------------------------


def test_lemma_a2_orthogonal_blocks():
    X = scaled_orthonormal(10, 6, 14)
    lhs, rhs = lemma_a2_gap(X, [0, 1], [2, 3])
    assert lhs == pytest.approx(0.0, abs=1e-12) and lhs <= rhs + 1e-12


def test_lemma_a2_random_10x6():
    X = np.random.default_rng(15).standard_normal((10, 6))
    lhs, rhs = lemma_a2_gap(X, [0, 1], [2, 3])
    assert lhs <= rhs + 1e-10


def test_lemma_a2_dependent_union():
    rng = np.random.default_rng(16)
    X = rng.standard_normal((10, 4))
    X[:, 2] = X[:, 0] + X[:, 1]
    lhs, rhs = lemma_a2_gap(X, [0, 1], [2])
    rp_i = rho_bounds_on_set(X, [0, 1])[1]
    rp_j = rho_bounds_on_set(X, [2])[1]
    assert rhs == pytest.approx(math.sqrt(rp_i * rp_j), rel=1e-8)
    assert lhs <= rhs + 1e-9


def test_lemma_a2_overlap_rejected():
    with pytest.raises(ValueError):
        lemma_a2_gap(np.eye(4), [0, 1], [1, 2])


# cone condition -----------------------------------------------------------


def test_cone_condition_noiseless():
    rng = np.random.default_rng(17)
    n, p = 40, 24
    X = rng.standard_normal((n, p))
    st_ = GroupStructure.even(p, 3)
    beta = np.zeros(p)
    beta[:6] = rng.standard_normal(6)
    truth = GroundTruth.from_beta(beta, st_)
    prob = Problem(X, X @ beta, st_)
    lam = np.full(st_.m, 0.05)
    res = solve_group_lasso(prob, SolverConfig(lam, tolerance=1e-10))
    chk = cone_condition_check(prob, truth, res.beta_hat, lam, np.zeros(n))
    assert chk.premise_holds
    assert chk.slack <= 10 * res.kkt_residual * lam.sum()


def test_cone_condition_premise_fails_with_tiny_lambda():
    rng = np.random.default_rng(18)
    X = rng.standard_normal((20, 6))
    st_ = GroupStructure.even(6, 2)
    beta = np.array([1.0, 1.0, 0, 0, 0, 0])
    eps = rng.standard_normal(20)
    chk = cone_condition_check(Problem(X, X @ beta + eps, st_), GroundTruth.from_beta(beta, st_),
                               beta, np.full(3, 1e-6), eps)
    assert not chk.premise_holds

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybrid_reservoir import readout as ro
from hybrid_reservoir.errors import ConfigurationError, InsufficientDataError, MetricError
from hybrid_reservoir.readout import SplitSpec


def delay_line(u, L):
    """States r[n] = [u[n], u[n-1], ..., u[n-L]] with zeros before the start."""
    T = len(u)
    r = np.zeros((T, L + 1))
    for j in range(L + 1):
        r[j:, j] = u[:T - j]
    return r


# -- embedding and targets ----------------------------------------------------------

def test_embed_k0_identity(rng):
    s = rng.random((10, 4))
    np.testing.assert_array_equal(ro.embed(s, 0), s)


def test_embed_row_length_and_order(rng):
    s = rng.random((6, 3000))
    phi = ro.embed(s, 2)
    assert phi.shape == (4, 9000)
    np.testing.assert_array_equal(phi[0], np.concatenate([s[2], s[1], s[0]]))


def test_embed_depth_too_large():
    with pytest.raises(ConfigurationError):
        ro.embed(np.zeros((3, 2)), 3)


def test_targets_shift():
    np.testing.assert_array_equal(ro.make_targets(np.array([1.0, 2.0, 3.0]), 1), [2.0, 3.0])
    assert len(ro.make_targets(np.arange(5.0), 4)) == 1
    with pytest.raises(ConfigurationError):
        ro.make_targets(np.arange(5.0), 5)


@given(st.integers(10, 60), st.integers(0, 4), st.integers(0, 4))
def test_usable_rows(T, k, H):
    phi, y, times = ro.supervised_rows(np.arange(T * 2.0).reshape(T, 2), np.arange(T * 1.0), k, H)
    assert len(phi) == len(y) == T - k - H
    np.testing.assert_array_equal(y, times + H)
    np.testing.assert_array_equal(phi[:, 0], 2.0 * times)


# -- splits -----------------------------------------------------------------------------

def test_offset_zero_is_plain_partition():
    tr, va, te = ro.split(100, SplitSpec())
    np.testing.assert_array_equal(tr, np.arange(70))
    np.testing.assert_array_equal(va, np.arange(70, 85))
    np.testing.assert_array_equal(te, np.arange(85, 100))


@given(st.integers(30, 2000), st.integers(0, 5), st.integers(0, 5))
def test_partition_sizes(n, off, k):
    tr, va, te = ro.split(n, SplitSpec(offset_index=off), k)
    m = n - (k if off * n // 6 > 0 else 0)
    assert len(tr) == int(np.floor(0.7 * m + 1e-9))
    assert len(va) == int(np.floor(0.15 * m + 1e-9))
    assert len(tr) + len(va) + len(te) == m
    assert abs(len(tr) - 0.7 * m) < 1 and abs(len(va) - 0.15 * m) < 1
    # the remainder absorbs both floor losses, so it can be off by up to two rows
    assert abs(len(te) - 0.15 * m) < 2
    allrows = np.concatenate([tr, va, te])
    assert len(np.unique(allrows)) == m


@given(st.integers(30, 600), st.integers(1, 5), st.integers(1, 5))
def test_parts_are_contiguous_runs_of_the_rotation(n, off, k):
    shift = off * n // 6
    rotated = np.roll(np.arange(n), -shift)[k if shift else 0:]
    tr, va, te = ro.split(n, SplitSpec(offset_index=off), k)
    np.testing.assert_array_equal(np.concatenate([tr, va, te]), rotated)


def test_seam_rows_dropped():
    tr, _, _ = ro.split(60, SplitSpec(offset_index=1), k=3)
    # rotation starts at row 10; rows 10..12 look back across the cut into rows 7..9
    assert tr[0] == 13 and not np.isin([10, 11, 12], tr).any()


def test_test_sets_disjoint_across_offsets():
    tests = [set(ro.split(600, SplitSpec(offset_index=o))[2].tolist()) for o in range(6)]
    for i in range(6):
        for j in range(i + 1, 6):
            assert not tests[i] & tests[j]
    assert len(set().union(*tests)) == 6 * 90


@pytest.mark.xfail(strict=True, reason="six 15% test windows cover at most 90% of the rows; "
                                        "see the decisions ledger")
def test_every_row_tested_for_some_offset():
    covered = set()
    for o in range(6):
        covered |= set(ro.split(600, SplitSpec(offset_index=o))[2].tolist())
    assert covered == set(range(600))


@pytest.mark.xfail(strict=True, reason="floor, floor, remainder leaves the test part 1.1 rows "
                                        "over its exact share here; see the decisions ledger")
def test_remainder_within_one_row():
    _, _, te = ro.split(26, SplitSpec())
    assert abs(len(te) - 0.15 * 26) <= 1


def test_split_too_few_rows():
    with pytest.raises(ConfigurationError):
        ro.split(5, SplitSpec())


@pytest.mark.parametrize("kw", [{"ratios": (0.5, 0.5, 0.5)}, {"offset_index": 6},
                                {"ratios": (1.0, 0.0, 0.0)}])
def test_bad_split_spec(kw):
    with pytest.raises(ConfigurationError):
        SplitSpec(**kw)


# -- PCA ----------------------------------------------------------------------------------

def test_pca_rank_one(rng):
    t = rng.normal(size=(50, 1))
    x = t @ np.array([[1.0, 2.0, -2.0]]) + np.array([3.0, 0.0, 1.0])
    p = ro.fit_pca(x)
    assert p.n_components == 1
    assert p.explained[0] == pytest.approx(1.0)


def test_pca_isotropic_2d_keeps_both():
    # exactly equal variances along two orthogonal axes
    x = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
    p = ro.fit_pca(x, 0.95)
    assert p.n_components == 2
    np.testing.assert_allclose(p.explained, [0.5, 0.5])


def test_pca_mean_projects_to_zero(rng):
    x = rng.normal(size=(40, 6))
    p = ro.fit_pca(x)
    np.testing.assert_allclose(p.transform(x.mean(axis=0)[None]), 0.0, atol=1e-12)


def test_pca_smallest_count_reaching_threshold(rng):
    scales = np.array([10.0, 5.0, 2.0, 1.0, 0.1])
    x = rng.normal(size=(5000, 5)) * scales
    p = ro.fit_pca(x, 0.95)
    cum = np.cumsum(p.explained)
    assert cum[-1] >= 0.95 and (p.n_components == 1 or cum[-2] < 0.95)


def test_pca_sign_convention(rng):
    x = rng.normal(size=(30, 5))
    a, b = ro.fit_pca(x), ro.fit_pca(-x + 1.0)
    for basis in (a.basis, b.basis):
        pivot = np.argmax(np.abs(basis), axis=0)
        assert np.all(basis[pivot, np.arange(basis.shape[1])] > 0)
    np.testing.assert_allclose(np.abs(a.basis), np.abs(b.basis), atol=1e-10)


def test_pca_basis_orthonormal(rng):
    p = ro.fit_pca(rng.normal(size=(20, 50)), 1.0)
    np.testing.assert_allclose(p.basis.T @ p.basis, np.eye(p.n_components), atol=1e-10)


@pytest.mark.parametrize("var_frac", [0.5, 0.95, 1.0])
def test_pca_wide_matches_svd(rng, var_frac):
    x = rng.normal(size=(30, 400)) * np.linspace(5.0, 0.1, 400)
    p = ro.fit_pca(x, var_frac)
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    n = p.n_components
    np.testing.assert_allclose(p.explained, (s**2 / np.sum(s**2))[:n], rtol=1e-10)
    np.testing.assert_allclose(np.abs(p.basis), np.abs(vt[:n].T), atol=1e-8)


def test_pca_zero_variance_flagged():
    p = ro.fit_pca(np.ones((10, 4)))
    assert p.degenerate and p.n_components == 0
    assert p.transform(np.ones((3, 4))).shape == (3, 0)


def test_pca_needs_two_rows():
    with pytest.raises(ConfigurationError):
        ro.fit_pca(np.ones((1, 4)))


def test_pca_isolated_from_val_and_test(rng):
    phi = rng.normal(size=(100, 8))
    y = rng.normal(size=100)
    tr, va, _ = ro.split(100, SplitSpec())
    a = ro.train_readout(phi, y, tr, va)
    phi2 = phi.copy()
    phi2[70:] = rng.normal(size=(30, 8)) * 100
    b = ro.fit_pca(phi2[tr])
    np.testing.assert_array_equal(a.pca.basis, b.basis)
    np.testing.assert_array_equal(a.pca.mean, b.mean)


# -- ridge -----------------------------------------------------------------------------------

def test_ridge_recovers_planted_weights(rng):
    x = rng.normal(size=(200, 2))
    y = 2 * x[:, 0] - x[:, 1]
    fit = ro.fit_ridge(ro.add_bias(x), y, 1e-12)
    np.testing.assert_allclose(fit.W[:2], [2.0, -1.0], atol=1e-6)
    assert abs(fit.W[2]) < 1e-6


def test_ridge_large_lambda_limit(rng):
    x = rng.normal(size=(50, 3))
    y = rng.normal(size=50) + 4.0
    fit = ro.fit_ridge(ro.add_bias(x), y, 1e12)
    assert np.all(np.abs(fit.W[:3]) < 1e-9)
    assert fit.W[3] == pytest.approx(y.mean(), rel=1e-9)


def test_ridge_lambda_zero_matches_normal_equations(rng):
    Phi = ro.add_bias(rng.normal(size=(80, 5)))
    y = rng.normal(size=80)
    fit = ro.fit_ridge(Phi, y, 0.0)
    want = np.linalg.solve(Phi.T @ Phi, Phi.T @ y)
    np.testing.assert_allclose(fit.W, want, rtol=1e-8, atol=1e-10)
    assert not fit.rank_deficient


def test_ridge_dense_solve_oracle(rng):
    Phi = ro.add_bias(rng.normal(size=(60, 7)))
    y = rng.normal(size=60)
    lam = 0.37
    R = lam * np.eye(8)
    R[-1, -1] = 0.0
    want = np.linalg.solve(Phi.T @ Phi + R, Phi.T @ y)
    np.testing.assert_allclose(ro.fit_ridge(Phi, y, lam).W, want, rtol=1e-8, atol=1e-12)


def test_ridge_singular_flagged():
    x = np.ones((10, 1)) * np.arange(10)[:, None]
    Phi = ro.add_bias(np.hstack([x, x]))
    fit = ro.fit_ridge(Phi, np.arange(10.0), 0.0)
    assert fit.rank_deficient
    np.testing.assert_allclose(fit.predict(np.hstack([x, x])), np.arange(10.0), atol=1e-9)


def test_ridge_negative_lambda():
    with pytest.raises(ConfigurationError):
        ro.fit_ridge(np.ones((3, 2)), np.ones(3), -1.0)


@given(arrays(np.float64, (30, 4), elements=st.floats(-10, 10)),
       arrays(np.float64, 30, elements=st.floats(-10, 10)),
       st.floats(1e-6, 1e3))
def test_ridge_normal_equation_residual(x, y, lam):
    Phi = ro.add_bias(x)
    W = ro.fit_ridge(Phi, y, lam).W
    R = lam * np.eye(5)
    R[-1, -1] = 0.0
    rhs = Phi.T @ y
    res = (Phi.T @ Phi + R) @ W - rhs
    assert np.linalg.norm(res) <= 1e-8 * max(np.linalg.norm(rhs), 1e-300) + 1e-9


@given(arrays(np.float64, (25, 3), elements=st.floats(-5, 5)),
       arrays(np.float64, 25, elements=st.floats(-5, 5)))
def test_training_residual_monotone_in_lambda(x, y):
    Phi = ro.add_bias(x)
    res = [np.sum((Phi @ ro.fit_ridge(Phi, y, lam).W - y) ** 2) for lam in ro.DEFAULT_LAMBDAS]
    assert np.all(np.diff(res) >= -1e-9 * (1 + max(res)))


# -- lambda selection ---------------------------------------------------------------------------

def test_select_single_candidate(rng):
    z = rng.normal(size=(20, 2))
    assert ro.select_lambda([0.3], z, z[:, 0], z, z[:, 0]) == 0.3


def test_select_noiseless_prefers_small(rng):
    z = rng.normal(size=(120, 4))
    y = z @ np.array([1.0, -2.0, 0.5, 3.0])
    lam = ro.select_lambda(ro.DEFAULT_LAMBDAS, z[:80], y[:80], z[80:], y[80:])
    errs = {l: ro.nrmse(ro.fit_ridge(ro.add_bias(z[:80]), y[:80], l).predict(z[80:]), y[80:])
            for l in ro.DEFAULT_LAMBDAS}
    assert lam <= 1e-6
    assert errs[lam] <= min(errs.values()) * (1 + 1e-9) + 1e-15


@pytest.mark.parametrize("seed", range(5))
def test_select_pure_noise_prefers_largest(seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(2200, 40))
    y = r.normal(size=2200)
    assert ro.select_lambda(ro.DEFAULT_LAMBDAS, z[:200], y[:200], z[200:], y[200:]) == 100.0


def test_select_ties_go_to_larger():
    z = np.zeros((10, 1))
    y = np.arange(10.0)
    assert ro.select_lambda([1e-3, 1.0, 5.0], z, y, z, y) == 5.0


def test_lambda_grid():
    assert len(ro.DEFAULT_LAMBDAS) == 11
    assert ro.DEFAULT_LAMBDAS[0] == pytest.approx(1e-8) and ro.DEFAULT_LAMBDAS[-1] == 100.0


# -- metrics ----------------------------------------------------------------------------------------

def test_nrmse_examples():
    t = np.array([1.0, 3.0, 2.0, 7.0])
    assert ro.nrmse(t, t) == 0.0
    assert ro.nrmse(np.full(4, t.mean()), t) == 1.0
    assert ro.nrmse(np.array([0.0, 0.0]), np.array([1.0, -1.0])) == 1.0


def test_nrmse_errors():
    with pytest.raises(MetricError):
        ro.nrmse(np.ones(3), np.ones(3))
    with pytest.raises(MetricError):
        ro.nrmse(np.ones(2), np.ones(3))


def test_pearson_examples():
    t = np.array([1.0, 3.0, 2.0, 7.0])
    assert ro.pearson(t, t) == pytest.approx(1.0)
    assert ro.pearson(-t, t) == pytest.approx(-1.0)
    assert ro.pearson(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 4.0])) == pytest.approx(
        0.9820, abs=1e-4)
    with pytest.raises(MetricError):
        ro.pearson(np.ones(4), t)


@given(arrays(np.float64, 40, elements=st.floats(-10, 10)),
       arrays(np.float64, 40, elements=st.floats(-10, 10)))
def test_nrmse_correlation_identity(p, t):
    p = p - p.mean() + t.mean()  # mean-matched predictions
    sp, st_ = p.std(), t.std()
    if st_ < 1e-3 or sp < 1e-3:
        return
    rho = ro.pearson(p, t)
    lhs = ro.nrmse(p, t) ** 2
    rhs = 2 * (1 - rho) * sp / st_ + (sp / st_ - 1) ** 2
    assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, lhs))


def test_r_squared():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    assert ro.r_squared(t, t) == 1.0
    assert ro.r_squared(np.full(4, 2.5), t) == 0.0
    assert ro.r_squared(-t, t) < 0


# -- evaluation and memory -----------------------------------------------------------------------------

def test_median_even():
    assert ro.median_even([6, 1, 5, 2, 4, 3]) == 3.5
    assert ro.median_even([2.0] * 6) == 2.0
    assert ro.median_even([3, 1, 2]) == 2.0


def test_plumbing_oracle(rng):
    u = rng.random(300)
    states = np.column_stack([rng.random((300, 5)), u])
    ev = ro.evaluate(states, u, H=0, k=0)
    assert len(ev.per_offset) == 6
    assert ev.median_nrmse < 1e-6


def test_identical_offsets_median(rng):
    u = rng.random(300)
    states = np.column_stack([u, u])
    ev = ro.evaluate(states, u, 0, 0)
    vals = [r.nrmse for r in ev.per_offset]
    assert ev.median_nrmse == pytest.approx(ro.median_even(vals))


def test_causality(rng):
    T = 120
    s = rng.normal(size=(T, 4))
    u = rng.random(T)
    phi, y, _ = ro.supervised_rows(s, u, 2, 1)
    tr, va, _ = ro.split(len(y), SplitSpec(), 2)
    model = ro.train_readout(phi, y, tr, va, k=2, H=1)
    n = 50
    before = ro.predict(model, ro.embed(s, 2))[n - 2]
    s2 = s.copy()
    s2[n + 1] += 100.0
    after = ro.predict(model, ro.embed(s2, 2))[n - 2]
    assert before == after


def test_sweep_worker_invariance(rng):
    s = rng.normal(size=(150, 6))
    u = rng.random(150)
    a = ro.sweep(s, u, [1, 2], [0, 1], workers=1)
    b = ro.sweep(s, u, [2, 1], [1, 0], workers=2)
    assert list(a) == list(b)
    for key in a:
        assert a[key].per_offset == b[key].per_offset


@pytest.mark.parametrize("L", [5, 10, 20])
def test_delay_line_memory_capacity(L):
    u = np.random.default_rng(L).uniform(size=600)
    mc = ro.memory_curve(delay_line(u, L), u, d_max=40)
    assert abs(mc.mc - L) <= 0.5
    assert np.all(mc.r2[:L] > 0.99)


def test_shuffled_states_no_memory():
    r = np.random.default_rng(5)
    u = r.uniform(size=600)
    s = delay_line(u, 10)[r.permutation(600)]
    assert ro.memory_curve(s, u, d_max=40).mc < 1.0


def test_memory_d_max_zero():
    mc = ro.memory_curve(np.zeros((50, 2)), np.zeros(50), 0)
    assert mc.mc == 0.0 and len(mc.r2) == 0


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_memory_bounds(d_max, seed):
    r = np.random.default_rng(seed)
    u = r.uniform(size=150)
    mc = ro.memory_curve(r.normal(size=(150, 5)), u, d_max)
    assert 0.0 <= mc.mc <= d_max
    assert np.all((mc.r2 >= 0) & (mc.r2 <= 1))


def test_memory_curve_clips_stored_values():
    c = ro.MemoryCurve(np.array([1.2, -0.3, 0.5]))
    np.testing.assert_array_equal(c.r2, [1.0, 0.0, 0.5])
    assert c.mc == 1.5
    np.testing.assert_array_equal(c.delays, [1, 2, 3])


def test_memory_insufficient_rows():
    with pytest.raises(InsufficientDataError):
        ro.memory_curve(np.zeros((20, 2)), np.zeros(20), 15)

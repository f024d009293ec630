import numpy as np
import pytest

from covmerge.errors import (
    DimensionGuardExceeded,
    SingularInformation,
    SingularSubmatrix,
)
from covmerge.matcore import LabeledSymMatrix
from covmerge.simlab import sample_wishart
from covmerge.wishart_em import (
    EMConfig,
    PartialSampleSet,
    asymptotic_se,
    combine,
    conditional_blocks,
    em_step,
    expected_complete,
    information_matrix,
    partial_loglik,
)


def lsm(labels, values):
    return LabeledSymMatrix(tuple(labels), np.asarray(values, dtype=float))


def random_spd(rng, n, jitter=1.0):
    A = rng.standard_normal((n, n))
    return A @ A.T + jitter * np.eye(n)


def draw_partials(rng, sigma_vals, labels, subsets, nu):
    """Wishart draws of sigma restricted to each label subset."""
    samples = []
    pos = {lab: i for i, lab in enumerate(labels)}
    for subset in subsets:
        ix = np.asarray([pos[lab] for lab in subset], dtype=np.intp)
        block = lsm(subset, sigma_vals[np.ix_(ix, ix)] / nu)
        samples.append(sample_wishart(block, nu, rng))
    return PartialSampleSet.from_samples(samples)


# ---------------------------------------------------------------------------
# partial_loglik
# ---------------------------------------------------------------------------


def loglik_oracle(psi_vals, labels, nu, sset):
    """Straight-line reimplementation with explicit inverses."""
    pos = {lab: i for i, lab in enumerate(labels)}
    total = 0.0
    for sample in sset.samples:
        ix = [pos[lab] for lab in sample.labels]
        block = psi_vals[np.ix_(ix, ix)]
        inv = np.linalg.inv(block)
        tr = float(np.trace(inv @ sample.values))
        logdet = float(np.linalg.slogdet(block)[1])
        total += -0.5 * (tr + nu * logdet)
    return total


class TestPartialLoglik:
    def test_identity_case(self):
        psi = lsm(["A", "B"], np.eye(2))
        sset = PartialSampleSet.from_samples([lsm(["A", "B"], np.eye(2))])
        assert partial_loglik(psi, 3.0, sset) == pytest.approx(-1.0, abs=1e-14)

    def test_diagonal_closed_form(self):
        psi = lsm(["A", "B"], np.diag([2.0, 2.0]))
        sset = PartialSampleSet.from_samples([lsm(["A", "B"], np.diag([2.0, 2.0]))])
        expected = -(1.0 + 2.0 * np.log(4.0))
        assert partial_loglik(psi, 4.0, sset) == pytest.approx(expected, rel=1e-14)

    def test_matches_straight_line_oracle(self):
        rng = np.random.default_rng(31)
        labels = ("A", "B", "C")
        psi_vals = random_spd(rng, 3)
        psi = lsm(labels, psi_vals)
        s1 = lsm(["A", "B"], random_spd(rng, 2))
        s2 = lsm(["B", "C"], random_spd(rng, 2))
        sset = PartialSampleSet.from_samples([s1, s2])
        got = partial_loglik(psi, 5.0, sset)
        want = loglik_oracle(psi_vals, labels, 5.0, sset)
        assert got == pytest.approx(want, rel=1e-12)

    def test_singular_block_raises(self):
        psi = lsm(["A", "B"], [[1.0, 1.0], [1.0, 1.0]])
        sset = PartialSampleSet.from_samples([lsm(["A", "B"], np.eye(2))])
        with pytest.raises(SingularSubmatrix, match="sample 0"):
            partial_loglik(psi, 3.0, sset)


# ---------------------------------------------------------------------------
# conditional_blocks
# ---------------------------------------------------------------------------


class TestConditionalBlocks:
    def test_block_diagonal_gives_zero_regression(self):
        psi = lsm(["A", "B", "C"], np.eye(3))
        B, schur = conditional_blocks(psi, [0, 1])
        np.testing.assert_array_equal(B, np.zeros((1, 2)))
        np.testing.assert_allclose(schur, [[1.0]])

    def test_two_by_two_closed_form(self):
        psi = lsm(["A", "B"], [[1.0, 0.5], [0.5, 1.0]])
        B, schur = conditional_blocks(psi, [0])
        np.testing.assert_allclose(B, [[0.5]])
        np.testing.assert_allclose(schur, [[0.75]])

    def test_matches_linear_solver_oracle(self):
        rng = np.random.default_rng(37)
        psi_vals = random_spd(rng, 4)
        psi = lsm([f"g{i}" for i in range(4)], psi_vals)
        a = [0, 2]
        b = [1, 3]
        B, schur = conditional_blocks(psi, a)
        # oracle: solve psi_aa X' = psi_ab column by column
        psi_aa = psi_vals[np.ix_(a, a)]
        psi_ab = psi_vals[np.ix_(a, b)]
        B_oracle = np.linalg.solve(psi_aa, psi_ab).T
        np.testing.assert_allclose(B, B_oracle, rtol=1e-12)
        schur_oracle = psi_vals[np.ix_(b, b)] - B_oracle @ psi_ab
        np.testing.assert_allclose(schur, schur_oracle, rtol=1e-10, atol=1e-12)
        assert np.linalg.eigvalsh(schur).min() > 0

    def test_shapes(self):
        rng = np.random.default_rng(38)
        psi = lsm([f"g{i}" for i in range(5)], random_spd(rng, 5))
        B, schur = conditional_blocks(psi, [4, 1])
        assert B.shape == (3, 2)
        assert schur.shape == (3, 3)


# ---------------------------------------------------------------------------
# expected_complete
# ---------------------------------------------------------------------------


def expected_complete_oracle(g_vals, psi_vals, a, nu):
    """Independent dense evaluation with explicit inverses and permutations."""
    n = psi_vals.shape[0]
    a = list(a)
    b = [i for i in range(n) if i not in a]
    inv_aa = np.linalg.inv(psi_vals[np.ix_(a, a)])
    B = psi_vals[np.ix_(b, a)] @ inv_aa
    schur = psi_vals[np.ix_(b, b)] - B @ psi_vals[np.ix_(a, b)]
    out = np.zeros((n, n))
    out[np.ix_(a, a)] = g_vals
    out[np.ix_(b, a)] = B @ g_vals
    out[np.ix_(a, b)] = (B @ g_vals).T
    out[np.ix_(b, b)] = nu * schur + B @ g_vals @ B.T
    return out


class TestExpectedComplete:
    def test_full_coverage_returns_sample(self):
        rng = np.random.default_rng(41)
        psi = lsm(["A", "B"], random_spd(rng, 2))
        g = lsm(["A", "B"], random_spd(rng, 2))
        out = expected_complete(g, psi, [0, 1], nu=7.0)
        np.testing.assert_array_equal(out.values, g.values)

    def test_identity_scale_single_block(self):
        psi = lsm(["A", "B", "C"], np.eye(3))
        g = lsm(["A"], [[2.0]])
        out = expected_complete(g, psi, [0], nu=5.0)
        np.testing.assert_allclose(out.values, np.diag([2.0, 5.0, 5.0]))

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(43)
        psi_vals = random_spd(rng, 4)
        psi = lsm([f"g{i}" for i in range(4)], psi_vals)
        a = [3, 1]
        g_vals = random_spd(rng, 2)
        g = lsm(["g3", "g1"], g_vals)
        out = expected_complete(g, psi, a, nu=11.0)
        want = expected_complete_oracle(g_vals, psi_vals, a, 11.0)
        np.testing.assert_allclose(out.values, want, rtol=1e-11, atol=1e-12)

    def test_positions_derived_from_labels(self):
        rng = np.random.default_rng(44)
        psi = lsm(["A", "B", "C"], random_spd(rng, 3))
        g = lsm(["C", "A"], random_spd(rng, 2))
        out_auto = expected_complete(g, psi, nu=6.0)
        out_explicit = expected_complete(g, psi, [2, 0], nu=6.0)
        np.testing.assert_array_equal(out_auto.values, out_explicit.values)


# ---------------------------------------------------------------------------
# em_step
# ---------------------------------------------------------------------------


def em_step_oracle(psi_vals, labels, sset, nu):
    """Update assembled with explicit permutation matrices."""
    n = len(labels)
    pos = {lab: i for i, lab in enumerate(labels)}
    total = np.zeros((n, n))
    for sample in sset.samples:
        a = [pos[lab] for lab in sample.labels]
        b = [i for i in range(n) if i not in a]
        k = len(a)
        # permutation matrix sending block coordinates (a then b) to union
        P = np.zeros((n, n))
        for col, i in enumerate(list(a) + list(b)):
            P[i, col] = 1.0
        inv_aa = np.linalg.inv(psi_vals[np.ix_(a, a)])
        B = psi_vals[np.ix_(b, a)] @ inv_aa
        schur = psi_vals[np.ix_(b, b)] - B @ psi_vals[np.ix_(a, b)]
        G = sample.values
        bracket = np.zeros((n, n))
        bracket[:k, :k] = G
        bracket[k:, :k] = B @ G
        bracket[:k, k:] = (B @ G).T
        bracket[k:, k:] = nu * schur + B @ G @ B.T
        total += P @ bracket @ P.T
    return total / (nu * len(sset.samples))


class TestEmStep:
    def test_complete_sample_fixed_point_in_one_step(self):
        rng = np.random.default_rng(47)
        g_vals = random_spd(rng, 3)
        g = lsm(["A", "B", "C"], g_vals)
        sset = PartialSampleSet.from_samples([g])
        psi0 = lsm(["A", "B", "C"], random_spd(rng, 3))
        nu = 4.0
        out = em_step(psi0, sset, EMConfig(nu=nu, pd_every_step=False))
        np.testing.assert_array_equal(out.values, g_vals / nu)

    def test_self_consistent_fixed_point(self):
        rng = np.random.default_rng(48)
        nu = 6.0
        psi_vals = random_spd(rng, 3)
        psi = lsm(["A", "B", "C"], psi_vals)
        subsets = [["A", "B"], ["B", "C"]]
        samples = [
            lsm(sub, nu * psi.submatrix(sub).values) for sub in subsets
        ]
        sset = PartialSampleSet.from_samples(samples)
        out = em_step(psi, sset, EMConfig(nu=nu, pd_every_step=False))
        np.testing.assert_allclose(out.values, psi_vals, rtol=1e-12, atol=1e-14)

    def test_matches_permutation_matrix_oracle(self):
        rng = np.random.default_rng(49)
        labels = ("A", "B", "C")
        psi = lsm(labels, np.eye(3))
        s1 = lsm(["A", "B"], random_spd(rng, 2))
        s2 = lsm(["B", "C"], random_spd(rng, 2))
        sset = PartialSampleSet.from_samples([s1, s2])
        nu = 5.0
        out = em_step(psi, sset, EMConfig(nu=nu, pd_every_step=False))
        want = em_step_oracle(psi.values, labels, sset, nu)
        np.testing.assert_allclose(out.values, want, rtol=1e-12, atol=1e-13)

    def test_weight_one_identical_to_unweighted(self):
        rng = np.random.default_rng(50)
        s1 = lsm(["A", "B"], random_spd(rng, 2))
        s2 = lsm(["B", "C"], random_spd(rng, 2))
        psi = lsm(["A", "B", "C"], random_spd(rng, 3))
        plain = PartialSampleSet.from_samples([s1, s2])
        weighted = PartialSampleSet.from_samples([s1, s2], weights=[1.0, 1.0])
        cfg = EMConfig(nu=7.0, pd_every_step=False)
        np.testing.assert_array_equal(
            em_step(psi, plain, cfg).values, em_step(psi, weighted, cfg).values
        )

    def test_weighted_self_consistent_fixed_point(self):
        rng = np.random.default_rng(51)
        nu = 8.0
        psi = lsm(["A", "B", "C"], random_spd(rng, 3))
        subsets = [["A", "B"], ["B", "C"]]
        samples = [lsm(sub, nu * psi.submatrix(sub).values) for sub in subsets]
        sset = PartialSampleSet.from_samples(samples, weights=[0.3, 0.3])
        out = em_step(psi, sset, EMConfig(nu=nu, pd_every_step=False))
        np.testing.assert_allclose(out.values, psi.values, rtol=1e-12, atol=1e-14)

    def test_indefinite_block_raises(self):
        # the E-step only inverts observed blocks of samples with a missing
        # part, so the bad block must belong to a genuinely partial sample
        psi = lsm(
            ["A", "B", "C"],
            [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        )
        sset = PartialSampleSet.from_samples(
            [lsm(["A", "B"], np.eye(2)), lsm(["C"], [[1.0]])]
        )
        with pytest.raises(SingularSubmatrix, match="sample 0"):
            em_step(psi, sset, EMConfig(nu=4.0, pd_every_step=False))


# ---------------------------------------------------------------------------
# combine
# ---------------------------------------------------------------------------


class TestCombine:
    def test_single_complete_sample_is_fixed_point(self):
        rng = np.random.default_rng(53)
        g_vals = random_spd(rng, 4)
        g = lsm([f"g{i}" for i in range(4)], g_vals)
        sset = PartialSampleSet.from_samples([g])
        result = combine(sset)
        assert result.converged
        assert np.linalg.norm(result.sigma_hat.values - g_vals) <= 1e-12
        # the very first iterate already equals the sample
        one = combine(sset, EMConfig(max_iter=1))
        assert np.linalg.norm(one.sigma_hat.values - g_vals) <= 1e-12

    def test_complete_data_reduction_to_mean(self):
        rng = np.random.default_rng(54)
        labels = tuple(f"g{i}" for i in range(3))
        gs = [lsm(labels, random_spd(rng, 3)) for _ in range(4)]
        sset = PartialSampleSet.from_samples(gs)
        result = combine(sset)
        mean = np.mean([g.values for g in gs], axis=0)
        np.testing.assert_allclose(result.sigma_hat.values, mean, atol=1e-12)
        assert result.converged

    def test_disjoint_samples_have_zero_cross_blocks(self):
        rng = np.random.default_rng(55)
        s1 = lsm(["A", "B"], random_spd(rng, 2))
        s2 = lsm(["C", "D"], random_spd(rng, 2))
        result = combine(PartialSampleSet.from_samples([s1, s2]))
        cross = result.sigma_hat.values[:2, 2:]
        np.testing.assert_array_equal(cross, np.zeros((2, 2)))

    def test_sigma_equals_nu_times_psi(self):
        rng = np.random.default_rng(56)
        sset = draw_partials(
            rng, random_spd(rng, 3), ("A", "B", "C"), [["A", "B"], ["B", "C"]], 10.0
        )
        result = combine(sset, EMConfig(nu=10.0))
        np.testing.assert_allclose(
            result.sigma_hat.values, 10.0 * result.psi_hat.values, rtol=1e-12
        )

    def test_fixed_point_stationarity(self):
        rng = np.random.default_rng(57)
        g = lsm(["A", "B"], random_spd(rng, 2))
        sset = PartialSampleSet.from_samples([g])
        result = combine(sset)
        again = em_step(result.psi_hat, sset, EMConfig(nu=result.nu))
        assert np.linalg.norm(again.values - result.psi_hat.values) < 1e-12

    def test_loglik_monotone_without_projection(self):
        for seed in range(10):
            rng = np.random.default_rng(1000 + seed)
            n = int(rng.integers(4, 10))
            labels = tuple(f"g{i}" for i in range(n))
            sigma = random_spd(rng, n)
            nu = float(n + 1)
            m = int(rng.integers(2, 6))
            subsets = []
            for _ in range(m):
                size = int(rng.integers(2, n + 1))
                subsets.append(
                    [labels[i] for i in np.sort(rng.choice(n, size, replace=False))]
                )
            sset = draw_partials(rng, sigma, labels, subsets, nu)
            result = combine(
                sset, EMConfig(nu=nu, max_iter=40, rel_tol=1e-12, pd_every_step=False)
            )
            ll = np.asarray(result.loglik_trace)
            drops = np.diff(ll)
            floor = -1e-8 * np.maximum(1.0, np.abs(ll[:-1]))
            assert np.all(drops >= floor)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(58)
        labels = ("A", "B", "C", "D")
        sigma = random_spd(rng, 4)
        sset = draw_partials(
            rng, sigma, labels, [["A", "B", "C"], ["B", "C", "D"]], 20.0
        )
        res1 = combine(sset, EMConfig(nu=20.0, rel_tol=1e-10, max_iter=3000))
        shuffled = [
            s.submatrix(tuple(np.array(s.labels)[rng.permutation(s.n)]))
            for s in sset.samples
        ]
        res2 = combine(
            PartialSampleSet.from_samples(shuffled),
            EMConfig(nu=20.0, rel_tol=1e-10, max_iter=3000),
        )
        aligned = res2.sigma_hat.submatrix(res1.sigma_hat.labels)
        np.testing.assert_allclose(
            aligned.values, res1.sigma_hat.values, atol=1e-10
        )

    def test_multi_start_reaches_same_loglik(self):
        rng = np.random.default_rng(59)
        n = 8
        labels = tuple(f"g{i}" for i in range(n))
        sigma = random_spd(rng, n)
        subsets = [
            [labels[i] for i in np.sort(rng.choice(n, 6, replace=False))]
            for _ in range(5)
        ]
        sset = draw_partials(rng, sigma, labels, subsets, 30.0)
        finals = []
        for start in range(4):
            srng = np.random.default_rng(600 + start)
            init = lsm(labels, np.diag(1.0 + srng.uniform(size=n)) + 0.1)
            res = combine(
                sset,
                EMConfig(
                    nu=30.0,
                    max_iter=10000,
                    rel_tol=1e-9,
                    pd_every_step=False,
                    init=init,
                ),
            )
            assert res.converged
            finals.append(res.loglik_trace[-1])
        finals = np.asarray(finals)
        assert (finals.max() - finals.min()) <= 1e-4 * max(1.0, np.abs(finals).max())

    def test_em_matches_ml_oracle_on_observed_blocks(self):
        # two overlapping samples never co-observe the (A, C) pair, so the
        # likelihood does not pin that entry; compare the pinned entries and
        # the achieved likelihood instead.
        import scipy.optimize

        rng = np.random.default_rng(61)
        labels = ("A", "B", "C")
        sigma = np.array([[1.0, 0.5, 0.3], [0.5, 1.2, 0.4], [0.3, 0.4, 0.9]])
        nu = 100.0
        sset = draw_partials(rng, sigma, labels, [["A", "B"], ["B", "C"]], nu)
        result = combine(
            sset, EMConfig(nu=nu, rel_tol=1e-13, max_iter=20000, pd_every_step=False)
        )

        tril = np.tril_indices(3)

        def unpack(theta):
            L = np.zeros((3, 3))
            L[tril] = theta
            L[np.diag_indices(3)] = np.exp(L[np.diag_indices(3)])
            return L @ L.T

        def objective(theta):
            psi = lsm(labels, unpack(theta))
            try:
                return -partial_loglik(psi, nu, sset)
            except SingularSubmatrix:
                return 1e12

        theta0 = np.zeros(6)
        theta0[[0, 2, 5]] = np.log(1.0 / np.sqrt(nu))
        opt = scipy.optimize.minimize(
            objective, theta0, method="Nelder-Mead",
            options={"maxiter": 20000, "xatol": 1e-12, "fatol": 1e-12},
        )
        sigma_opt = nu * unpack(opt.x)
        got = result.sigma_hat.values
        for (i, j) in [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]:
            assert abs(got[i, j] - sigma_opt[i, j]) < 1e-3
        # EM's likelihood is at least as good as the oracle's
        em_ll = result.loglik_trace[-1]
        assert em_ll >= -opt.fun - 1e-6


# ---------------------------------------------------------------------------
# asymptotic standard errors
# ---------------------------------------------------------------------------


def fd_hessian(psi_m, nu, sset, h=1e-5):
    """Central-difference Hessian of partial_loglik at psi_m."""
    n = psi_m.n
    rows, cols = np.triu_indices(n)
    p = rows.size

    def f(shifts):
        vals = np.array(psi_m.values)
        for (j, k, d) in shifts:
            vals[j, k] += d
            if j != k:
                vals[k, j] += d
        return partial_loglik(LabeledSymMatrix(psi_m.labels, vals), nu, sset)

    H = np.zeros((p, p))
    for a in range(p):
        for b in range(a, p):
            j1, k1 = rows[a], cols[a]
            j2, k2 = rows[b], cols[b]
            val = (
                f([(j1, k1, h), (j2, k2, h)])
                - f([(j1, k1, h), (j2, k2, -h)])
                - f([(j1, k1, -h), (j2, k2, h)])
                + f([(j1, k1, -h), (j2, k2, -h)])
            ) / (4 * h * h)
            H[a, b] = H[b, a] = val
    return H


class TestAsymptoticSe:
    def test_information_matches_fd_hessian_complete(self):
        rng = np.random.default_rng(63)
        g = lsm(["A", "B"], random_spd(rng, 2))
        sset = PartialSampleSet.from_samples([g])
        nu = 10.0
        result = combine(sset, EMConfig(nu=nu))
        info = information_matrix(result.psi_hat, sset, nu)
        num = -fd_hessian(result.psi_hat, nu, sset, h=1e-5)
        np.testing.assert_allclose(info, num, rtol=1e-4)

    def test_information_matches_fd_hessian_partial(self):
        rng = np.random.default_rng(64)
        labels = ("A", "B", "C")
        sigma = random_spd(rng, 3)
        sset = draw_partials(rng, sigma, labels, [["A", "B"], ["B", "C"]], 12.0)
        result = combine(
            sset, EMConfig(nu=12.0, rel_tol=1e-12, max_iter=5000, pd_every_step=False)
        )
        info = information_matrix(result.psi_hat, sset, 12.0)
        num = -fd_hessian(result.psi_hat, 12.0, sset, h=1e-5)
        np.testing.assert_allclose(info, num, rtol=2e-4, atol=1e-4)

    def test_duplicating_samples_halves_se(self):
        rng = np.random.default_rng(65)
        labels = ("A", "B", "C")
        sigma = random_spd(rng, 3)
        subsets = [["A", "B"], ["B", "C"], ["A", "C"]]
        sset = draw_partials(rng, sigma, labels, subsets, 15.0)
        result = combine(sset, EMConfig(nu=15.0, rel_tol=1e-11, max_iter=5000))
        doubled = PartialSampleSet.from_samples(list(sset.samples) * 2)
        info1 = information_matrix(result.psi_hat, sset, 15.0)
        info2 = information_matrix(result.psi_hat, doubled, 15.0)
        np.testing.assert_allclose(info2, 2.0 * info1, rtol=1e-12, atol=1e-10)
        se1 = asymptotic_se(result, sset, 15.0)
        result2 = combine(doubled, EMConfig(nu=15.0, rel_tol=1e-11, max_iter=5000))
        se2 = asymptotic_se(result2, doubled, 15.0)
        np.testing.assert_allclose(
            se2.values, se1.values / np.sqrt(2.0), rtol=1e-6
        )

    def test_nu_changes_se_but_not_estimate(self):
        rng = np.random.default_rng(66)
        labels = ("A", "B", "C")
        sigma = random_spd(rng, 3)
        subsets = [["A", "B"], ["B", "C"], ["A", "C"]]
        sset = draw_partials(rng, sigma, labels, subsets, 40.0)
        res_a = combine(sset, EMConfig(nu=4.0, rel_tol=1e-11, max_iter=5000))
        res_b = combine(sset, EMConfig(nu=8.0, rel_tol=1e-11, max_iter=5000))
        assert (
            np.linalg.norm(res_a.sigma_hat.values - res_b.sigma_hat.values) <= 1e-9
        )
        se_a = asymptotic_se(res_a, sset, 4.0)
        se_b = asymptotic_se(res_b, sset, 8.0)
        assert np.abs(se_a.values - se_b.values).max() > 1e-6

    def test_dimension_guard(self):
        rng = np.random.default_rng(67)
        g = lsm(["A", "B", "C"], random_spd(rng, 3))
        sset = PartialSampleSet.from_samples([g])
        result = combine(sset)
        with pytest.raises(DimensionGuardExceeded):
            asymptotic_se(result, sset, result.nu, max_dim=2)

    def test_never_co_observed_pair_is_singular(self):
        rng = np.random.default_rng(68)
        labels = ("A", "B", "C")
        sigma = random_spd(rng, 3)
        sset = draw_partials(rng, sigma, labels, [["A", "B"], ["B", "C"]], 12.0)
        result = combine(sset, EMConfig(nu=12.0))
        with pytest.raises(SingularInformation):
            asymptotic_se(result, sset, 12.0)

    def test_compute_se_flag(self):
        rng = np.random.default_rng(69)
        g = lsm(["A", "B"], random_spd(rng, 2))
        sset = PartialSampleSet.from_samples([g])
        result = combine(sset, EMConfig(nu=10.0, compute_se=True))
        assert result.se is not None
        assert result.se.labels == ("A", "B")
        assert np.all(result.se.values[np.triu_indices(2)] > 0)


class TestEMConfig:
    def test_rejects_bad_tol(self):
        with pytest.raises(ValueError):
            EMConfig(rel_tol=0.0)

    def test_rejects_nu_not_above_n(self):
        sset = PartialSampleSet.from_samples([lsm(["A", "B"], np.eye(2))])
        with pytest.raises(ValueError, match="nu"):
            combine(sset, EMConfig(nu=2.0))

    def test_weights_validated(self):
        with pytest.raises(ValueError, match="weights"):
            PartialSampleSet.from_samples(
                [lsm(["A"], [[1.0]])], weights=[1.5]
            )

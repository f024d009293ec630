"""Simulation and evaluation harness.

Provides a seeded Wishart sampler, partial-sample generation, two simulation
protocols (accuracy of the combined estimate over a grid of problem sizes,
and convergence of the log-likelihood from perturbed starts), a
combine-versus-impute benchmark on simulated marker panels, and the two
cross-validation schemes used for genomic prediction.

Reproducibility: every replicate draws from its own counter-based substream
(`SeedSequence(seed, spawn_key=...)`), so replicate r can be re-run in
isolation, and results are reduced in replicate order regardless of how many
workers execute them.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyGroup, LabelMismatch, NotPositiveDefinite
from .imputation import IncompleteFeatureMatrix, grm_from_imputed, soft_impute
from .kernels import MarkerMatrix, grm_rowcentered
from .matcore import LabeledSymMatrix
from .mixedmodel import PhenotypeTable, fit_gblup, predict_gebv
from .wishart_em import EMConfig, PartialSampleSet, combine

FORCE_ALL_ROUNDS = 1e-300  # rel_tol that never triggers early stopping


@dataclass(frozen=True)
class SimConfig:
    """Controls for one partial-sample simulation cell."""

    n_total: int
    n_kernel: int
    size_min: int
    size_max: int
    nu: float
    replicates: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if not (1 <= self.size_min <= self.size_max <= self.n_total):
            raise ValueError(
                "need 1 <= size_min <= size_max <= n_total, got "
                f"{self.size_min}, {self.size_max}, {self.n_total}"
            )
        if self.nu <= self.n_total:
            raise ValueError("nu must exceed n_total for sampling validity")


@dataclass(frozen=True)
class MetricReport:
    """Accuracy summary for one harness configuration."""

    mse_upper: float
    pearson_upper: float
    per_replicate: tuple[dict, ...] = ()
    observed_pairs: Optional[dict] = None
    unobserved_pairs: Optional[dict] = None


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (seed, key...) combination."""
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    )


def _map_jobs(fn, items, threads: int = 1) -> list:
    """Run jobs over items, returning results in input order."""
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _labels(prefix: str, n: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{i:04d}" for i in range(n))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_wishart(
    psi: LabeledSymMatrix, nu: float, rng: np.random.Generator
) -> LabeledSymMatrix:
    """One draw with expectation ``nu * psi``, via the triangular construction.

    The lower-triangular factor has chi-distributed diagonal entries (df
    ``nu - i`` for row i) and standard normal subdiagonal entries; fractional
    degrees of freedom are allowed as long as ``nu`` exceeds the dimension.
    """
    n = psi.n
    if nu <= n - 1:
        raise ValueError(f"need nu > n - 1 for a proper draw, got nu={nu}, n={n}")
    try:
        L = np.linalg.cholesky(psi.values)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("scale matrix is not positive definite") from None
    A = np.zeros((n, n))
    diag_df = nu - np.arange(n)
    A[np.diag_indices(n)] = np.sqrt(rng.chisquare(diag_df))
    lower = np.tril_indices(n, k=-1)
    A[lower] = rng.standard_normal(len(lower[0]))
    F = L @ A
    return psi.with_values(F @ F.T)


def make_partials(
    sigma: LabeledSymMatrix, cfg: SimConfig, rng: np.random.Generator
) -> PartialSampleSet:
    """Partial Wishart realizations of ``sigma`` on random label subsets.

    Each of ``cfg.n_kernel`` samples picks a uniform subset size in
    ``[size_min, size_max]``, a uniform label subset of that size, and draws
    the restricted matrix from the Wishart model with mean ``sigma`` there.
    """
    if sigma.n != cfg.n_total:
        raise ValueError(f"sigma has {sigma.n} labels, config says {cfg.n_total}")
    samples = []
    for _ in range(cfg.n_kernel):
        size = int(rng.integers(cfg.size_min, cfg.size_max + 1))
        pos = np.sort(rng.choice(cfg.n_total, size=size, replace=False))
        labels = tuple(sigma.labels[i] for i in pos)
        psi_block = LabeledSymMatrix(labels, sigma.values[np.ix_(pos, pos)] / cfg.nu)
        samples.append(sample_wishart(psi_block, cfg.nu, rng))
    return PartialSampleSet.from_samples(samples)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _aligned_pair(A: LabeledSymMatrix, B: LabeledSymMatrix):
    if set(A.labels) != set(B.labels):
        raise LabelMismatch("matrices cover different label sets")
    if B.labels != A.labels:
        B = B.submatrix(A.labels)
    return A.values, B.values


def mse_upper(A: LabeledSymMatrix, B: LabeledSymMatrix) -> float:
    """Mean squared difference over the upper triangle, diagonal included."""
    a, b = _aligned_pair(A, B)
    iu = np.triu_indices(a.shape[0])
    return float(np.mean((a[iu] - b[iu]) ** 2))


def pearson_upper(A: LabeledSymMatrix, B: LabeledSymMatrix) -> float:
    """Pearson correlation of the upper-triangle entries, diagonal included."""
    a, b = _aligned_pair(A, B)
    iu = np.triu_indices(a.shape[0])
    x, y = a[iu], b[iu]
    if x.std() < 1e-15 or y.std() < 1e-15:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def _safe_corr(x: np.ndarray, y: np.ndarray) -> float:
    """Correlation that reports 0.0 when either side is degenerate."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.std() < 1e-12 or y.std() < 1e-12:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1])


# ---------------------------------------------------------------------------
# Protocol 1: accuracy of the combined estimate across problem sizes
# ---------------------------------------------------------------------------


def _ex1_truth(rng: np.random.Generator, n_total: int) -> LabeledSymMatrix:
    r = 1.0 + 0.7 * rng.uniform(size=n_total)
    sigma = np.diag(r) + 0.3
    sigma /= np.mean(np.diag(sigma))
    return LabeledSymMatrix(_labels("g", n_total), sigma)


def run_supp_ex1(
    n_totals: Sequence[int] = (40, 80),
    n_kernels: Sequence[int] = (10, 40),
    replicates: int = 10,
    nu: float = 300.0,
    size_range: tuple[int, int] = (10, 40),
    em_rounds: int = 50,
    rng_seed: int = 0,
    threads: int = 1,
) -> dict[tuple[int, int], MetricReport]:
    """Estimate a known matrix from partial samples over a size grid.

    For each (n_total, n_kernel) cell: draw a diagonally dominant truth,
    generate partial samples of random size, run a fixed number of EM rounds,
    and score the estimate against the truth on the recovered labels (the
    union can miss labels when few samples are drawn).
    """

    def one_replicate(args):
        n_total, n_kernel, rep = args
        rng = substream(rng_seed, n_total, n_kernel, rep)
        sigma = _ex1_truth(rng, n_total)
        cfg = SimConfig(
            n_total=n_total,
            n_kernel=n_kernel,
            size_min=min(size_range[0], n_total),
            size_max=min(size_range[1], n_total),
            nu=nu,
            replicates=replicates,
            rng_seed=rng_seed,
        )
        sset = make_partials(sigma, cfg, rng)
        result = combine(
            sset,
            EMConfig(nu=nu, max_iter=em_rounds, rel_tol=FORCE_ALL_ROUNDS),
        )
        truth_part = sigma.submatrix(result.sigma_hat.labels)
        return {
            "replicate": rep,
            "mse": mse_upper(truth_part, result.sigma_hat),
            "pearson": pearson_upper(truth_part, result.sigma_hat),
            "coverage": sset.n / n_total,
        }

    reports: dict[tuple[int, int], MetricReport] = {}
    for n_total in n_totals:
        for n_kernel in n_kernels:
            jobs = [(n_total, n_kernel, rep) for rep in range(replicates)]
            rows = _map_jobs(one_replicate, jobs, threads)
            reports[(n_total, n_kernel)] = MetricReport(
                mse_upper=float(np.mean([r["mse"] for r in rows])),
                pearson_upper=float(np.mean([r["pearson"] for r in rows])),
                per_replicate=tuple(rows),
            )
    return reports


# ---------------------------------------------------------------------------
# Protocol 2: log-likelihood convergence from perturbed starts
# ---------------------------------------------------------------------------


def run_supp_ex2(
    n: int = 50,
    n_samples: int = 10,
    n_starts: int = 10,
    nu: float = 300.0,
    size_range: Optional[tuple[int, int]] = None,
    max_iter: int = 400,
    rel_tol: float = 1e-11,
    rng_seed: int = 0,
) -> dict:
    """Run the combiner from several perturbed starts on one sampled problem.

    Returns the per-start log-likelihood traces plus the largest relative gap
    between final values; the projection step is disabled so each trace is an
    exact ascent path.
    """
    if size_range is None:
        size_range = (max(2, n // 10), max(3, n // 4))
    data_rng = substream(rng_seed, 0)
    b = data_rng.uniform(size=n)
    sigma_vals = np.diag(b + 1.0) + 0.2
    sigma = LabeledSymMatrix(_labels("g", n), sigma_vals)
    cfg = SimConfig(
        n_total=n,
        n_kernel=n_samples,
        size_min=size_range[0],
        size_max=size_range[1],
        nu=nu,
        rng_seed=rng_seed,
    )
    sset = make_partials(sigma, cfg, data_rng)

    traces = []
    finals = []
    iteration_counts = []
    for start in range(n_starts):
        start_rng = substream(rng_seed, 1, start)
        b2 = start_rng.uniform(size=n)
        b0 = start_rng.uniform()
        init_vals = np.diag(0.5 * b2 + 1.0) + 0.3 * b0
        init = LabeledSymMatrix(sigma.labels, init_vals)
        result = combine(
            sset,
            EMConfig(
                nu=nu,
                max_iter=max_iter,
                rel_tol=rel_tol,
                pd_every_step=False,
                init=init,
            ),
        )
        traces.append(result.loglik_trace)
        finals.append(result.loglik_trace[-1])
        iteration_counts.append(result.iterations)

    finals_arr = np.asarray(finals)
    scale = max(1.0, float(np.abs(finals_arr).max()))
    max_rel_gap = float((finals_arr.max() - finals_arr.min()) / scale)
    return {
        "traces": traces,
        "final_logliks": finals,
        "max_rel_gap": max_rel_gap,
        "iterations": iteration_counts,
        "union_size": sset.n,
    }


# ---------------------------------------------------------------------------
# Combine-versus-impute benchmark on marker panels
# ---------------------------------------------------------------------------


def simulate_markers(
    rng: np.random.Generator,
    n_genotypes: int = 300,
    n_markers: int = 3000,
    n_subpops: int = 3,
    fst: float = 0.15,
    ploidy: int = 2,
    family_size: int = 1,
) -> MarkerMatrix:
    """Structured biallelic dosages: drifted subpopulations, optional sib families.

    With ``family_size > 1`` (diploid only), genotypes come in full-sib groups:
    two parents are drawn from the subpopulation frequencies and each sib
    receives one gamete per parent, which puts realistic 0.5-level relatedness
    into the panel.
    """
    base = rng.uniform(0.1, 0.9, size=n_markers)
    shape_a = base * (1.0 - fst) / fst
    shape_b = (1.0 - base) * (1.0 - fst) / fst
    subpop_freqs = rng.beta(shape_a, shape_b, size=(n_subpops, n_markers))
    if family_size <= 1:
        assignment = np.arange(n_genotypes) % n_subpops
        dosages = rng.binomial(ploidy, subpop_freqs[assignment]).astype(float)
    else:
        if ploidy != 2:
            raise ValueError("family simulation supports diploid dosages only")
        dosages = np.empty((n_genotypes, n_markers))
        produced = 0
        family = 0
        while produced < n_genotypes:
            freqs = subpop_freqs[family % n_subpops]
            parents = rng.binomial(2, freqs, size=(2, n_markers))
            size = min(family_size, n_genotypes - produced)
            gametes_a = rng.binomial(1, parents[0] / 2.0, size=(size, n_markers))
            gametes_b = rng.binomial(1, parents[1] / 2.0, size=(size, n_markers))
            dosages[produced : produced + size] = gametes_a + gametes_b
            produced += size
            family += 1
    return MarkerMatrix(
        _labels("g", n_genotypes),
        _labels("m", n_markers),
        dosages,
        ploidy=ploidy,
    )


def _pair_stats(est: np.ndarray, truth: np.ndarray, pair_mask: np.ndarray) -> dict:
    if not pair_mask.any():
        return {"mse": float("nan"), "mean_abs_err": float("nan"), "count": 0}
    diff = est[pair_mask] - truth[pair_mask]
    return {
        "mse": float(np.mean(diff**2)),
        "mean_abs_err": float(np.mean(np.abs(diff))),
        "count": int(pair_mask.sum()),
    }


def merge_vs_impute_bench(
    markers: Optional[MarkerMatrix] = None,
    n_genotypes: int = 300,
    n_markers: int = 3000,
    panel_genotypes: int = 100,
    panel_markers: int = 500,
    n_kernel: int = 3,
    replicates: int = 10,
    rank: int = 40,
    lam: float = 0.0,
    rng_seed: int = 0,
    threads: int = 1,
    em_max_iter: int = 150,
    em_rel_tol: float = 1e-5,
    impute_max_iter: int = 40,
    impute_tol: float = 1e-4,
) -> tuple[MetricReport, MetricReport]:
    """Score combining panel relationship matrices against feature imputation.

    Each replicate samples overlapping genotype-by-marker panels from a
    marker pool, builds one relationship matrix per panel, and produces two
    union-level estimates: the EM-combined matrix, and the relationship
    matrix of the soft-impute-completed merged feature matrix. Both are
    scored against the full-data relationship matrix on the union genotypes.
    Returns (combined_report, imputed_report).
    """

    def one_replicate(rep: int) -> dict:
        rng = substream(rng_seed, n_kernel, rep)
        pool = markers if markers is not None else simulate_markers(
            rng, n_genotypes, n_markers
        )
        n_geno = pool.n_genotypes
        full_grm = grm_rowcentered(pool)

        panel_g = []
        panel_m = []
        panel_grms = []
        for _ in range(n_kernel):
            gpos = np.sort(rng.choice(n_geno, size=panel_genotypes, replace=False))
            mpos = np.sort(rng.choice(pool.n_markers, size=panel_markers, replace=False))
            panel_g.append(gpos)
            panel_m.append(mpos)
            panel_grms.append(grm_rowcentered(pool.subset(gpos, mpos)))

        sset = PartialSampleSet.from_samples(panel_grms)
        combined = combine(
            sset, EMConfig(max_iter=em_max_iter, rel_tol=em_rel_tol)
        ).sigma_hat

        union_g = np.asarray(full_grm.positions(sset.index.union_labels))
        union_m = np.unique(np.concatenate(panel_m))
        g_map = {int(g): i for i, g in enumerate(union_g)}
        m_map = {int(m): j for j, m in enumerate(union_m)}
        merged = np.full((union_g.size, union_m.size), np.nan)
        dosages = np.asarray(pool.dosages)
        for gpos, mpos in zip(panel_g, panel_m):
            rows = [g_map[int(g)] for g in gpos]
            cols = [m_map[int(m)] for m in mpos]
            merged[np.ix_(rows, cols)] = dosages[np.ix_(gpos, mpos)]
        incomplete = IncompleteFeatureMatrix(
            sset.index.union_labels,
            tuple(pool.marker_labels[j] for j in union_m),
            merged,
        )
        completed = soft_impute(
            incomplete,
            max_rank=min(rank, union_g.size, union_m.size),
            lam=lam,
            tol=impute_tol,
            max_iter=impute_max_iter,
        )
        imputed = grm_from_imputed(completed)

        truth = full_grm.submatrix(sset.index.union_labels)
        nu_union = sset.n
        co_observed = np.zeros((nu_union, nu_union), dtype=bool)
        for gpos in panel_g:
            rows = [g_map[int(g)] for g in gpos]
            co_observed[np.ix_(rows, rows)] = True
        upper = np.triu(np.ones_like(co_observed), k=0).astype(bool)

        comb_vals = combined.values
        imp_vals = imputed.submatrix(truth.labels).values
        return {
            "replicate": rep,
            "coverage": nu_union / n_geno,
            "mse_combined": mse_upper(truth, combined),
            "mse_imputed": mse_upper(truth, imputed),
            "pearson_combined": pearson_upper(truth, combined),
            "pearson_imputed": pearson_upper(truth, imputed),
            "combined_observed": _pair_stats(comb_vals, truth.values, co_observed & upper),
            "combined_unobserved": _pair_stats(
                comb_vals, truth.values, ~co_observed & upper
            ),
            "imputed_observed": _pair_stats(imp_vals, truth.values, co_observed & upper),
            "imputed_unobserved": _pair_stats(
                imp_vals, truth.values, ~co_observed & upper
            ),
        }

    rows = _map_jobs(one_replicate, range(replicates), threads)

    def aggregate(prefix: str) -> MetricReport:
        return MetricReport(
            mse_upper=float(np.mean([r[f"mse_{prefix}"] for r in rows])),
            pearson_upper=float(np.mean([r[f"pearson_{prefix}"] for r in rows])),
            per_replicate=tuple(rows),
            observed_pairs={
                "mean_mse": float(np.mean([r[f"{prefix}_observed"]["mse"] for r in rows]))
            },
            unobserved_pairs={
                "mean_mse": float(
                    np.mean([r[f"{prefix}_unobserved"]["mse"] for r in rows])
                ),
                "mean_abs_err": float(
                    np.mean([r[f"{prefix}_unobserved"]["mean_abs_err"] for r in rows])
                ),
            },
        )

    return aggregate("combined"), aggregate("imputed")


# ---------------------------------------------------------------------------
# Cross-validation schemes
# ---------------------------------------------------------------------------


def cv_random_kfold(
    pheno: PhenotypeTable,
    G: LabeledSymMatrix,
    k: int = 10,
    rng_seed: int = 0,
    threads: int = 1,
) -> dict:
    """Random k-fold cross-validation over phenotyped genotypes.

    Folds partition the distinct phenotyped genotypes; each fold's records
    are predicted from a model trained on the remaining records, and accuracy
    is the correlation between predictions and observations within the fold.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    try:
        G.positions(pheno.genotypes)
    except Exception as exc:
        raise LabelMismatch(str(exc)) from None
    genos = sorted(set(pheno.genotypes))
    if len(genos) < k:
        raise ValueError(f"{len(genos)} genotypes cannot fill {k} folds")
    rng = substream(rng_seed, 0)
    order = rng.permutation(len(genos))
    fold_of = {}
    for i, gi in enumerate(order):
        fold_of[genos[gi]] = i % k

    record_folds = np.asarray([fold_of[g] for g in pheno.genotypes])

    def one_fold(fold: int) -> dict:
        test_idx = np.flatnonzero(record_folds == fold)
        train_idx = np.flatnonzero(record_folds != fold)
        fit = fit_gblup(pheno.subset(train_idx), G)
        targets = [pheno.genotypes[i] for i in test_idx]
        preds = predict_gebv(fit, G, targets)
        observed = np.asarray(pheno.values)[test_idx]
        return {
            "fold": fold,
            "accuracy": _safe_corr(preds, observed),
            "n_records": int(test_idx.size),
        }

    per_fold = _map_jobs(one_fold, range(k), threads)
    return {
        "per_fold": per_fold,
        "mean_accuracy": float(np.mean([f["accuracy"] for f in per_fold])),
        "fold_of": fold_of,
    }


def cv_leave_group_out(
    pheno: PhenotypeTable,
    G: LabeledSymMatrix,
    groups: dict[str, Sequence[str]],
    threads: int = 1,
) -> dict:
    """Leave one named genotype group out at a time.

    Each group's records are predicted from a model trained on all other
    records; accuracy is the within-group correlation between predictions and
    observations.
    """
    membership: dict[str, set] = {name: set(labs) for name, labs in groups.items()}
    covered = set().union(*membership.values()) if membership else set()
    for g in set(pheno.genotypes):
        if g not in covered:
            raise LabelMismatch(f"phenotyped genotype {g!r} is in no group")

    def one_group(name: str) -> dict:
        members = membership[name]
        test_idx = np.flatnonzero([g in members for g in pheno.genotypes])
        train_idx = np.flatnonzero([g not in members for g in pheno.genotypes])
        if test_idx.size == 0:
            raise EmptyGroup(f"group {name!r} has no phenotyped records")
        if train_idx.size == 0:
            raise EmptyGroup(f"leaving out group {name!r} empties the training side")
        fit = fit_gblup(pheno.subset(train_idx), G)
        targets = [pheno.genotypes[i] for i in test_idx]
        preds = predict_gebv(fit, G, targets)
        observed = np.asarray(pheno.values)[test_idx]
        return {
            "group": name,
            "accuracy": _safe_corr(preds, observed),
            "n_records": int(test_idx.size),
        }

    per_group = _map_jobs(one_group, list(membership), threads)
    return {
        "per_group": per_group,
        "mean_accuracy": float(np.mean([g["accuracy"] for g in per_group])),
    }

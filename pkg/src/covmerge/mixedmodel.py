"""GBLUP mixed model on a relationship matrix, and its ridge-regression twin.

The model is ``y = X beta + Z u + e`` with ``u ~ N(0, sigma2_g * G)`` and
``e ~ N(0, sigma2_e * I)``. Variance components come from restricted maximum
likelihood profiled down to the single ratio ``lam = sigma2_g / sigma2_e``,
optimized by golden-section search on ``log(lam)`` after one eigendecomposition
of ``Z G Z'``. Genotype labels tie phenotype records to rows of G; repeated
records per genotype are allowed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateDesign,
    LabelMismatch,
    MatrixFormatError,
    UnknownLabel,
)
from .kernels import MarkerMatrix, _require_complete
from .matcore import LabeledSymMatrix

LOG_LAMBDA_RANGE = (-10.0, 10.0)
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class PhenotypeTable:
    """Phenotype records: genotype label, trait value, optional covariates."""

    genotypes: tuple[str, ...]
    values: np.ndarray
    covariates: Optional[np.ndarray] = None
    trait_name: str = "trait"

    def __post_init__(self):
        genos = tuple(str(g) for g in self.genotypes)
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size != len(genos):
            raise ValueError("one trait value per record is required")
        if not np.all(np.isfinite(vals)):
            raise ValueError("trait values must be finite")
        if any(not g for g in genos):
            raise ValueError("genotype labels must be non-empty")
        cov = self.covariates
        if cov is not None:
            cov = np.array(cov, dtype=float)
            if cov.ndim == 1:
                cov = cov[:, None]
            if cov.shape[0] != len(genos):
                raise ValueError("covariate rows must match records")
            cov.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "genotypes", genos)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "covariates", cov)

    @property
    def n_records(self) -> int:
        return len(self.genotypes)

    def subset(self, idx) -> "PhenotypeTable":
        idx = np.asarray(idx, dtype=np.intp)
        cov = None if self.covariates is None else np.array(self.covariates)[idx]
        return PhenotypeTable(
            tuple(self.genotypes[i] for i in idx),
            np.array(self.values)[idx],
            covariates=cov,
            trait_name=self.trait_name,
        )


@dataclass(frozen=True)
class MixedModelFit:
    """Variance components, fixed effects, and BLUPs from one GBLUP fit."""

    sigma2_g: float
    sigma2_e: float
    lambda_hat: float
    beta_hat: np.ndarray
    u_hat: np.ndarray
    reml_loglik: float
    labels: tuple[str, ...]
    record_genotypes: tuple[str, ...]
    vinv_resid: np.ndarray
    trait_name: str = "trait"

    @property
    def heritability(self) -> float:
        return self.sigma2_g / (self.sigma2_g + self.sigma2_e)


def _design(pheno: PhenotypeTable) -> np.ndarray:
    n = pheno.n_records
    if pheno.covariates is None:
        X = np.ones((n, 1))
    else:
        X = np.column_stack([np.ones(n), pheno.covariates])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DegenerateDesign("fixed-effect design matrix is rank deficient")
    if n - X.shape[1] < 1:
        raise DegenerateDesign("more fixed effects than residual degrees of freedom")
    return X


def _profiled_reml(log_lam, d, y_t, x_t, n, p):
    """Negative profiled REML criterion at one value of log(lambda)."""
    lam = np.exp(log_lam)
    w = 1.0 / (lam * d + 1.0)
    xtwx = x_t.T @ (w[:, None] * x_t)
    beta = np.linalg.solve(xtwx, x_t.T @ (w * y_t))
    resid = y_t - x_t @ beta
    quad = float(np.sum(w * resid * resid))
    sig2e = quad / (n - p)
    _, logdet_x = np.linalg.slogdet(xtwx)
    ll = -0.5 * (
        (n - p) * np.log(2.0 * np.pi * sig2e)
        + float(np.sum(np.log(lam * d + 1.0)))
        + logdet_x
        + (n - p)
    )
    return -ll, beta, resid, w, sig2e


def _golden_min(fun, lo, hi, iters=80):
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = fun(x1), fun(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = fun(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = fun(x2)
    return 0.5 * (a + b)


def fit_gblup(pheno: PhenotypeTable, G: LabeledSymMatrix) -> MixedModelFit:
    """REML fit of the GBLUP model; BLUPs cover every label of G."""
    try:
        gidx = G.positions(pheno.genotypes)
    except UnknownLabel as exc:
        raise LabelMismatch(str(exc)) from None
    if len(set(pheno.genotypes)) < 2:
        raise DegenerateDesign("need records on at least two distinct genotypes")
    X = _design(pheno)
    y = np.asarray(pheno.values)
    n, p = X.shape

    K = G.values[np.ix_(gidx, gidx)]
    d, U = np.linalg.eigh(K)
    if d.min() < -1e-8 * max(d.max(), 1.0):
        raise ValueError(
            "relationship matrix is far from positive semidefinite; "
            "project it first (see matcore.near_pd)"
        )
    d = np.clip(d, 0.0, None)
    y_t = U.T @ y
    x_t = U.T @ X

    def objective(log_lam):
        return _profiled_reml(log_lam, d, y_t, x_t, n, p)[0]

    log_lam = _golden_min(objective, *LOG_LAMBDA_RANGE)
    neg_ll, beta, resid_t, w, sig2e = _profiled_reml(log_lam, d, y_t, x_t, n, p)
    lam = float(np.exp(log_lam))
    sig2g = lam * sig2e

    # V^{-1} (y - X beta) in record order; the BLUP for any label row g of G
    # is sigma2_g * G[g, records] @ vinv_resid. Computed through the same
    # indexing expression as predict_gebv so the two agree bit for bit.
    vinv_resid = (U @ (w * resid_t)) / sig2e
    all_pos = np.arange(G.n, dtype=np.intp)
    u_hat = sig2g * (G.values[np.ix_(all_pos, gidx)] @ vinv_resid)

    return MixedModelFit(
        sigma2_g=float(sig2g),
        sigma2_e=float(sig2e),
        lambda_hat=lam,
        beta_hat=np.asarray(beta, dtype=float),
        u_hat=u_hat,
        reml_loglik=float(-neg_ll),
        labels=G.labels,
        record_genotypes=pheno.genotypes,
        vinv_resid=vinv_resid,
        trait_name=pheno.trait_name,
    )


def predict_gebv(
    fit: MixedModelFit, G: LabeledSymMatrix, target_labels: Sequence[str]
) -> np.ndarray:
    """Estimated genotypic values for targets, phenotyped or not.

    Uses the BLUP conditional mean through the cross-covariance block of G
    between targets and the training records; targets that were phenotyped
    reproduce their entries of ``u_hat``.
    """
    tpos = G.positions(target_labels)
    rpos = G.positions(fit.record_genotypes)
    return fit.sigma2_g * (G.values[np.ix_(tpos, rpos)] @ fit.vinv_resid)


def fit_rrblup(pheno: PhenotypeTable, M: MarkerMatrix):
    """Ridge regression on marker effects; returns (effects, fit).

    Centers each marker at its mean dosage, fits GBLUP with the unscaled
    cross-product relationship, and backs the marker effects out of the
    genotype BLUPs; predictions from the two parameterizations coincide.
    """
    dos = _require_complete(M, "ridge marker regression")
    centered = dos - dos.mean(axis=0, keepdims=True)
    G = LabeledSymMatrix(M.genotype_labels, centered @ centered.T)
    fit = fit_gblup(pheno, G)
    rpos = G.positions(fit.record_genotypes)
    effects = fit.sigma2_g * (centered[rpos].T @ fit.vinv_resid)
    return effects, fit


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------


def read_phenotype_csv(path) -> PhenotypeTable:
    """Parse ``genotype,<trait>[,covariate...]`` records."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MatrixFormatError("empty file", path=path, line=1) from None
        if len(header) < 2:
            raise MatrixFormatError(
                "header must be 'genotype,<trait>[,covariate...]'",
                path=path,
                line=1,
            )
        trait = header[1].strip()
        n_cov = len(header) - 2
        genos: list[str] = []
        vals: list[float] = []
        covs: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MatrixFormatError(
                    f"expected {len(header)} fields, got {len(row)}",
                    path=path,
                    line=line_no,
                )
            genos.append(row[0].strip())
            try:
                vals.append(float(row[1]))
                covs.append([float(tok) for tok in row[2:]])
            except ValueError as exc:
                raise MatrixFormatError(
                    f"not a number: {exc}", path=path, line=line_no
                ) from None
        if not genos:
            raise MatrixFormatError("no phenotype records", path=path)
        try:
            return PhenotypeTable(
                tuple(genos),
                np.array(vals),
                covariates=np.array(covs) if n_cov else None,
                trait_name=trait,
            )
        except ValueError as exc:
            raise MatrixFormatError(str(exc), path=path) from exc


def write_gebv_csv(labels: Sequence[str], gebvs: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["genotype", "gebv"])
        for lab, v in zip(labels, gebvs):
            writer.writerow([lab, repr(float(v))])

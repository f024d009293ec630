"""Relationship, distance, and kernel matrices from genomic feature matrices.

Two relationship constructions are provided: the allele-frequency-centered
additive matrix (singular, zero row sums) and the row-centered covariance
form normalized to unit mean diagonal (nonsingular for enough independent
features, and ploidy-agnostic). Squared-distance and Gaussian/polynomial
kernel conversions operate on top of these.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateCovariance,
    DuplicateLabel,
    MatrixFormatError,
    MissingDosages,
    MonomorphicPanel,
    NegativeBandwidth,
    NonzeroDiagonal,
)
from .matcore import LabeledSymMatrix, _check_unique

DIAG_ZERO_TOL = 1e-9


@dataclass(frozen=True)
class MarkerMatrix:
    """Genotypes x markers dosage matrix with an explicit missing mask."""

    genotype_labels: tuple[str, ...]
    marker_labels: tuple[str, ...]
    dosages: np.ndarray
    ploidy: int = 2
    missing_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        genos = tuple(str(g) for g in self.genotype_labels)
        marks = tuple(str(m) for m in self.marker_labels)
        _check_unique(genos)
        _check_unique(marks)
        if self.ploidy < 1:
            raise ValueError("ploidy must be a positive integer")
        dos = np.array(self.dosages, dtype=float)
        if dos.shape != (len(genos), len(marks)):
            raise ValueError(
                f"dosages shape {dos.shape} does not match "
                f"{len(genos)} genotypes x {len(marks)} markers"
            )
        if self.missing_mask is None:
            mask = ~np.isfinite(dos)
        else:
            mask = np.array(self.missing_mask, dtype=bool)
            if mask.shape != dos.shape:
                raise ValueError("missing_mask shape does not match dosages")
            mask |= ~np.isfinite(dos)
        observed = dos[~mask]
        if observed.size and (observed.min() < 0 or observed.max() > self.ploidy):
            raise ValueError(
                f"observed dosages must lie in [0, {self.ploidy}]"
            )
        dos = dos.copy()
        dos[mask] = np.nan
        dos.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "genotype_labels", genos)
        object.__setattr__(self, "marker_labels", marks)
        object.__setattr__(self, "dosages", dos)
        object.__setattr__(self, "missing_mask", mask)

    @property
    def n_genotypes(self) -> int:
        return len(self.genotype_labels)

    @property
    def n_markers(self) -> int:
        return len(self.marker_labels)

    @property
    def has_missing(self) -> bool:
        return bool(self.missing_mask.any())

    def mean_imputed(self) -> "MarkerMatrix":
        """Fill missing dosages with each marker's observed mean."""
        if not self.has_missing:
            return self
        dos = np.array(self.dosages)
        col_means = np.nanmean(np.where(self.missing_mask, np.nan, dos), axis=0)
        if np.any(~np.isfinite(col_means)):
            bad = int(np.flatnonzero(~np.isfinite(col_means))[0])
            raise MissingDosages(
                f"marker {self.marker_labels[bad]!r} has no observed dosages"
            )
        fill = np.where(self.missing_mask, col_means[None, :], dos)
        return MarkerMatrix(
            self.genotype_labels,
            self.marker_labels,
            fill,
            ploidy=self.ploidy,
            missing_mask=np.zeros_like(self.missing_mask),
        )

    def subset(self, genotypes=None, markers=None) -> "MarkerMatrix":
        gpos = (
            np.arange(self.n_genotypes)
            if genotypes is None
            else np.asarray(genotypes, dtype=np.intp)
        )
        mpos = (
            np.arange(self.n_markers)
            if markers is None
            else np.asarray(markers, dtype=np.intp)
        )
        return MarkerMatrix(
            tuple(self.genotype_labels[i] for i in gpos),
            tuple(self.marker_labels[j] for j in mpos),
            np.array(self.dosages)[np.ix_(gpos, mpos)],
            ploidy=self.ploidy,
            missing_mask=np.array(self.missing_mask)[np.ix_(gpos, mpos)],
        )


def _require_complete(M: MarkerMatrix, what: str) -> np.ndarray:
    if M.has_missing:
        n_missing = int(M.missing_mask.sum())
        raise MissingDosages(
            f"{what} needs complete dosages; {n_missing} missing "
            "(impute first, e.g. MarkerMatrix.mean_imputed())"
        )
    return np.asarray(M.dosages)


def grm_vanraden(M: MarkerMatrix) -> LabeledSymMatrix:
    """Allele-frequency-centered additive relationship matrix.

    Columns are centered at ``ploidy * p`` and the cross-product is scaled by
    ``ploidy * sum(p * (1 - p))``. Rows of the result sum to zero.
    """
    dos = _require_complete(M, "additive relationship")
    ploidy = float(M.ploidy)
    p = dos.mean(axis=0) / ploidy
    scale = ploidy * np.sum(p * (1.0 - p))
    if scale <= 0:
        raise MonomorphicPanel("every marker is monomorphic; scaling constant is 0")
    X = (dos - ploidy * p[None, :]) / np.sqrt(scale)
    G = X @ X.T
    return LabeledSymMatrix(M.genotype_labels, 0.5 * (G + G.T))


def _rowcentered_features(values: np.ndarray):
    """Row-centered features scaled so the linear kernel has unit mean diagonal."""
    centered = values - values.mean(axis=1, keepdims=True)
    scale = np.sum(centered**2) / values.shape[0]
    return centered, scale


def grm_rowcentered_values(values: np.ndarray, labels) -> LabeledSymMatrix:
    """Row-centered relationship matrix from a raw feature array."""
    if values.shape[0] < 2:
        raise DegenerateCovariance("need at least two genotypes")
    centered, scale = _rowcentered_features(values)
    if scale <= 0:
        raise DegenerateCovariance(
            "all rows are constant; genotype covariance is degenerate"
        )
    G = centered @ centered.T / scale
    return LabeledSymMatrix(tuple(labels), 0.5 * (G + G.T))


def grm_rowcentered(M: MarkerMatrix) -> LabeledSymMatrix:
    """Genotype-covariance relationship matrix with unit mean diagonal.

    Equals the genotype-by-genotype covariance of the dosages divided by the
    mean of its diagonal; works for any ploidy or feature type.
    """
    dos = _require_complete(M, "row-centered relationship")
    return grm_rowcentered_values(dos, M.genotype_labels)


def grm_to_dist(G: LabeledSymMatrix) -> LabeledSymMatrix:
    """Squared-distance matrix: d_ij = G_ii + G_jj - 2 G_ij."""
    diag = np.diag(G.values)
    D = diag[:, None] + diag[None, :] - 2.0 * G.values
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return G.with_values(D)


def dist_to_grm(D: LabeledSymMatrix) -> LabeledSymMatrix:
    """Relationship matrix from a squared-distance matrix by double centering.

    Computes ``-0.5 * P @ D @ P`` with the centering projector
    ``P = I - 11'/n``; the result has zero row sums.
    """
    diag = np.abs(np.diag(D.values))
    if np.any(diag > DIAG_ZERO_TOL * max(1.0, float(np.abs(D.values).max()))):
        bad = int(np.argmax(diag))
        raise NonzeroDiagonal(
            f"distance diagonal must be zero; entry for {D.labels[bad]!r} "
            f"is {D.values[bad, bad]!r}"
        )
    vals = D.values
    row_mean = vals.mean(axis=1, keepdims=True)
    grand = vals.mean()
    G = -0.5 * (vals - row_mean - row_mean.T + grand)
    return D.with_values(0.5 * (G + G.T))


def gaussian_kernel(D: LabeledSymMatrix, h: float) -> LabeledSymMatrix:
    """Entrywise ``exp(-h * D)`` of a squared-distance matrix."""
    if h <= 0:
        raise NegativeBandwidth(f"bandwidth must be positive, got {h!r}")
    tol = DIAG_ZERO_TOL * max(1.0, float(np.abs(D.values).max()))
    if np.any(D.values < -tol):
        raise ValueError("squared distances must be nonnegative")
    if np.any(np.abs(np.diag(D.values)) > tol):
        raise NonzeroDiagonal("distance diagonal must be zero")
    K = np.exp(-h * np.clip(D.values, 0.0, None))
    np.fill_diagonal(K, 1.0)
    return D.with_values(0.5 * (K + K.T))


def polynomial_kernel(M: MarkerMatrix, c: float, d: int) -> LabeledSymMatrix:
    """Entrywise ``(x_i . x_j + c) ** d`` on row-centered scaled features.

    Uses the same feature scaling as grm_rowcentered so the linear part has
    unit mean diagonal; ``c=0, d=1`` reduces to that linear kernel.
    """
    if d < 1 or int(d) != d:
        raise ValueError(f"degree must be a positive integer, got {d!r}")
    linear = grm_rowcentered(M)
    K = (linear.values + float(c)) ** int(d)
    return linear.with_values(0.5 * (K + K.T))


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------


def write_marker_csv(M: MarkerMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", *M.marker_labels])
        for lab, row, miss in zip(M.genotype_labels, M.dosages, M.missing_mask):
            writer.writerow(
                [lab, *("" if m else repr(float(v)) for v, m in zip(row, miss))]
            )


def read_marker_csv(path, ploidy: int = 2) -> MarkerMatrix:
    """Parse a genotype-by-marker dosage CSV; empty cells mean missing."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MatrixFormatError("empty file", path=path, line=1) from None
        if len(header) < 2 or header[0] != "id":
            raise MatrixFormatError(
                "header must be 'id,<marker1>,...'", path=path, line=1, column=1
            )
        markers = [h.strip() for h in header[1:]]
        m = len(markers)
        genos: list[str] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != m + 1:
                raise MatrixFormatError(
                    f"expected {m + 1} fields, got {len(row)}", path=path, line=line_no
                )
            genos.append(row[0].strip())
            parsed = []
            for j, tok in enumerate(row[1:]):
                tok = tok.strip()
                if tok == "":
                    parsed.append(np.nan)
                    continue
                try:
                    parsed.append(float(tok))
                except ValueError:
                    raise MatrixFormatError(
                        f"not a number: {tok!r}", path=path, line=line_no, column=j + 2
                    ) from None
            rows.append(parsed)
        if not rows:
            raise MatrixFormatError("no genotype rows", path=path)
        try:
            return MarkerMatrix(tuple(genos), tuple(markers), np.array(rows), ploidy=ploidy)
        except (DuplicateLabel, ValueError) as exc:
            raise MatrixFormatError(str(exc), path=path) from exc

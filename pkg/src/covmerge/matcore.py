"""Labeled symmetric matrices and the label-alignment machinery.

A LabeledSymMatrix pairs an ordered tuple of entity labels with a dense
symmetric value matrix. Every estimator in the package moves these objects
around, so construction validates the invariants once and instances are
immutable afterwards.

The CSV layout used throughout is: header ``id,<label1>,...,<labelN>``
followed by one row per label carrying the full matrix (both triangles).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DuplicateLabel,
    EmptySampleSet,
    MatrixFormatError,
    NonPositiveDiagonal,
    UnknownLabel,
)

SYMMETRY_RTOL = 1e-12
DEFAULT_EPS_RATIO = 1e-8


def _check_unique(labels: Sequence[str]) -> None:
    seen = set()
    for lab in labels:
        if lab in seen:
            raise DuplicateLabel(f"label {lab!r} occurs more than once")
        seen.add(lab)


@dataclass(frozen=True)
class LabeledSymMatrix:
    """Symmetric matrix with an ordered tuple of unique entity labels."""

    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        labels = tuple(str(l) for l in self.labels)
        _check_unique(labels)
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"values must be square, got shape {values.shape}")
        if values.shape[0] != len(labels):
            raise ValueError(
                f"{len(labels)} labels but values are {values.shape[0]}x{values.shape[1]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("matrix entries must be finite")
        gap = np.abs(values - values.T)
        tol = SYMMETRY_RTOL * np.maximum(1.0, np.abs(values))
        if np.any(gap > tol):
            i, j = np.unravel_index(np.argmax(gap - tol), gap.shape)
            raise ValueError(
                f"matrix is not symmetric at ({labels[i]}, {labels[j]}): "
                f"{values[i, j]!r} vs {values[j, i]!r}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def label_to_pos(self) -> dict[str, int]:
        cached = self.__dict__.get("_label_to_pos")
        if cached is None:
            cached = {lab: i for i, lab in enumerate(self.labels)}
            self.__dict__["_label_to_pos"] = cached
        return cached

    def positions(self, labels: Iterable[str]) -> np.ndarray:
        """Positions of the given labels in this matrix, in the given order."""
        lookup = self.label_to_pos
        out = []
        for lab in labels:
            if lab not in lookup:
                raise UnknownLabel(f"label {lab!r} not present")
            out.append(lookup[lab])
        return np.asarray(out, dtype=np.intp)

    def submatrix(self, labels: Sequence[str]) -> "LabeledSymMatrix":
        pos = self.positions(labels)
        return LabeledSymMatrix(tuple(labels), self.values[np.ix_(pos, pos)])

    def with_values(self, values: np.ndarray) -> "LabeledSymMatrix":
        return LabeledSymMatrix(self.labels, values)


@dataclass(frozen=True)
class UnionIndex:
    """Union label ordering plus each sample's positions within it."""

    union_labels: tuple[str, ...]
    per_sample_positions: tuple[np.ndarray, ...]

    def __post_init__(self):
        _check_unique(self.union_labels)
        n = len(self.union_labels)
        positions = tuple(
            np.asarray(p, dtype=np.intp) for p in self.per_sample_positions
        )
        for k, pos in enumerate(positions):
            if pos.size and (pos.min() < 0 or pos.max() >= n):
                raise ValueError(f"sample {k} has positions outside the union")
        object.__setattr__(self, "union_labels", tuple(self.union_labels))
        object.__setattr__(self, "per_sample_positions", positions)

    @property
    def n(self) -> int:
        return len(self.union_labels)


class EmbedPositions(NamedTuple):
    """Observed positions (sample order) and their complement in the union."""

    observed: np.ndarray
    complement: np.ndarray


def build_union_index(
    samples: Sequence[LabeledSymMatrix], order: str = "first-seen"
) -> UnionIndex:
    """Union of sample labels plus each sample's positions within it.

    ``order="first-seen"`` keeps the order labels first appear across the
    sample list; ``order="sorted"`` produces a lexicographic union for
    canonical output files.
    """
    if len(samples) == 0:
        raise EmptySampleSet("need at least one partial sample")
    union: list[str] = []
    seen: set[str] = set()
    for s in samples:
        _check_unique(s.labels)
        for lab in s.labels:
            if lab not in seen:
                seen.add(lab)
                union.append(lab)
    if order == "sorted":
        union = sorted(union)
    elif order != "first-seen":
        raise ValueError(f"unknown union order {order!r}")
    lookup = {lab: i for i, lab in enumerate(union)}
    positions = tuple(
        np.asarray([lookup[lab] for lab in s.labels], dtype=np.intp) for s in samples
    )
    return UnionIndex(tuple(union), positions)


def embed(sample: LabeledSymMatrix, index: UnionIndex) -> EmbedPositions:
    """Selection data for scattering a sample into union coordinates.

    Returns the sample's positions in the union (in sample order) and the
    ascending complement, so callers can place blocks without materializing
    permutation matrices.
    """
    lookup = {lab: i for i, lab in enumerate(index.union_labels)}
    observed = []
    for lab in sample.labels:
        if lab not in lookup:
            raise UnknownLabel(f"sample label {lab!r} not in union index")
        observed.append(lookup[lab])
    observed = np.asarray(observed, dtype=np.intp)
    mask = np.ones(index.n, dtype=bool)
    mask[observed] = False
    return EmbedPositions(observed, np.flatnonzero(mask))


def near_pd_values(values: np.ndarray, eps_ratio: float = DEFAULT_EPS_RATIO) -> np.ndarray:
    """Array-level eigenvalue clipping; returns the input when already valid."""
    if eps_ratio <= 0:
        raise ValueError("eps_ratio must be positive")
    sym = 0.5 * (values + values.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    floor = eps_ratio * np.max(np.abs(eigvals)) if eigvals.size else 0.0
    if eigvals.size == 0 or eigvals[0] >= floor:
        return values
    clipped = np.maximum(eigvals, floor)
    out = (eigvecs * clipped) @ eigvecs.T
    return 0.5 * (out + out.T)


def near_pd(M: LabeledSymMatrix, eps_ratio: float = DEFAULT_EPS_RATIO) -> LabeledSymMatrix:
    """Nearest positive-definite surrogate by eigenvalue clipping.

    Eigenvalues below ``eps_ratio * max(|eigenvalues|)`` are raised to that
    floor and the matrix is reassembled; an input already satisfying the bound
    is returned unchanged.
    """
    out = near_pd_values(M.values, eps_ratio)
    if out is M.values:
        return M
    return M.with_values(out)


def to_correlation(M: LabeledSymMatrix) -> LabeledSymMatrix:
    """Rescale a covariance-like matrix to unit diagonal."""
    diag = np.diag(M.values)
    bad = np.flatnonzero(diag <= 0)
    if bad.size:
        raise NonPositiveDiagonal(
            f"diagonal entry for {M.labels[bad[0]]!r} is {diag[bad[0]]!r}, "
            "must be strictly positive"
        )
    inv_sd = 1.0 / np.sqrt(diag)
    out = M.values * inv_sd[:, None] * inv_sd[None, :]
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 1.0)
    return M.with_values(out)


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_matrix_csv(M: LabeledSymMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", *M.labels])
        for lab, row in zip(M.labels, M.values):
            writer.writerow([lab, *(_fmt(v) for v in row)])


def read_matrix_csv(path) -> LabeledSymMatrix:
    """Parse a labeled symmetric matrix, reporting the failing line/column."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MatrixFormatError("empty file", path=path, line=1) from None
        if len(header) < 2 or header[0] != "id":
            raise MatrixFormatError(
                "header must be 'id,<label1>,...'", path=path, line=1, column=1
            )
        labels = [h.strip() for h in header[1:]]
        n = len(labels)
        values = np.zeros((n, n))
        row_labels = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n + 1:
                raise MatrixFormatError(
                    f"expected {n + 1} fields, got {len(row)}", path=path, line=line_no
                )
            row_labels.append(row[0].strip())
            if len(row_labels) > n:
                raise MatrixFormatError(
                    f"more rows than header labels ({n})", path=path, line=line_no
                )
            for j, tok in enumerate(row[1:]):
                try:
                    values[len(row_labels) - 1, j] = float(tok)
                except ValueError:
                    raise MatrixFormatError(
                        f"not a number: {tok!r}", path=path, line=line_no, column=j + 2
                    ) from None
        if len(row_labels) != n:
            raise MatrixFormatError(
                f"expected {n} rows, got {len(row_labels)}", path=path
            )
        if row_labels != labels:
            raise MatrixFormatError(
                "row labels must match header labels in order", path=path
            )
        try:
            return LabeledSymMatrix(tuple(labels), values)
        except (DuplicateLabel, ValueError) as exc:
            raise MatrixFormatError(str(exc), path=path) from exc

"""Low-rank completion of a merged feature matrix (the imputation baseline).

The solver is iterative soft-thresholded SVD: fill missing cells with the
current estimate, take an SVD, shrink the singular values by the nuclear-norm
penalty, truncate to the rank cap, and repeat. The observed-entry objective
``0.5 * ||P_obs(X - Z)||^2 + lam * ||Z||_*`` decreases at every step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptyRowOrColumn
from .kernels import grm_rowcentered_values
from .matcore import LabeledSymMatrix, _check_unique


@dataclass(frozen=True)
class IncompleteFeatureMatrix:
    """Row/column labeled matrix with a missing mask (True = missing)."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    values: np.ndarray
    missing_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        rows = tuple(str(r) for r in self.row_labels)
        cols = tuple(str(c) for c in self.col_labels)
        _check_unique(rows)
        _check_unique(cols)
        vals = np.array(self.values, dtype=float)
        if vals.shape != (len(rows), len(cols)):
            raise ValueError(
                f"values shape {vals.shape} does not match "
                f"{len(rows)} rows x {len(cols)} columns"
            )
        if self.missing_mask is None:
            mask = ~np.isfinite(vals)
        else:
            mask = np.array(self.missing_mask, dtype=bool)
            if mask.shape != vals.shape:
                raise ValueError("missing_mask shape does not match values")
            mask |= ~np.isfinite(vals)
        observed = ~mask
        if not observed.any(axis=1).all():
            bad = int(np.flatnonzero(~observed.any(axis=1))[0])
            raise EmptyRowOrColumn(f"row {rows[bad]!r} has no observed entries")
        if not observed.any(axis=0).all():
            bad = int(np.flatnonzero(~observed.any(axis=0))[0])
            raise EmptyRowOrColumn(f"column {cols[bad]!r} has no observed entries")
        vals = vals.copy()
        vals[mask] = 0.0
        vals.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "row_labels", rows)
        object.__setattr__(self, "col_labels", cols)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "missing_mask", mask)


@dataclass(frozen=True)
class CompletionResult:
    """Completed matrix plus solver diagnostics."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    values: np.ndarray
    iterations: int
    converged: bool
    objective_trace: tuple[float, ...]


def soft_impute(
    X: IncompleteFeatureMatrix,
    max_rank: Optional[int] = None,
    lam: float = 0.0,
    tol: float = 1e-5,
    max_iter: int = 100,
) -> CompletionResult:
    """Complete a partially observed matrix by soft-thresholded SVD.

    ``max_rank`` caps the rank of the estimate (default: no cap beyond the
    matrix itself); ``lam`` is the nuclear-norm penalty. Non-convergence is
    reported through the ``converged`` flag, never raised.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    vals = np.asarray(X.values)
    obs = ~np.asarray(X.missing_mask)
    full_rank = min(vals.shape)
    if max_rank is None:
        max_rank = full_rank
    if not (1 <= max_rank <= full_rank):
        raise ValueError(f"max_rank must lie in [1, {full_rank}]")

    Z = np.zeros_like(vals)
    trace: list[float] = []
    converged = False
    iterations = 0
    for _ in range(max_iter):
        filled = np.where(obs, vals, Z)
        U, s, Vt = np.linalg.svd(filled, full_matrices=False)
        s_new = np.clip(s - lam, 0.0, None)
        s_new[max_rank:] = 0.0
        Z_new = (U * s_new) @ Vt
        iterations += 1
        obj = 0.5 * float(np.sum((vals[obs] - Z_new[obs]) ** 2)) + lam * float(
            np.sum(s_new)
        )
        trace.append(obj)
        denom = float(np.linalg.norm(Z))
        rel = float(np.linalg.norm(Z_new - Z)) / denom if denom > 0 else np.inf
        Z = Z_new
        if rel < tol:
            converged = True
            break

    return CompletionResult(
        row_labels=X.row_labels,
        col_labels=X.col_labels,
        values=Z,
        iterations=iterations,
        converged=converged,
        objective_trace=tuple(trace),
    )


def grm_from_imputed(completed: CompletionResult) -> LabeledSymMatrix:
    """Row-centered relationship matrix built from a completed feature matrix."""
    return grm_rowcentered_values(np.asarray(completed.values), completed.row_labels)

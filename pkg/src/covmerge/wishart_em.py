"""EM estimator for one covariance matrix from partially overlapping samples.

Each partial sample is treated as the observed block of a Wishart draw with
known degrees of freedom ``nu`` and scale ``psi`` (so the draw's expectation
is ``nu * psi``). The E-step completes every sample's missing blocks with
their conditional expectations given the observed block and the current
scale; the M-step averages the completed matrices. The reported estimate is
``sigma = nu * psi``, which does not depend on the choice of ``nu``.

Conventions: for a sample observed on positions ``a`` with complement ``b``,
the regression map is ``B = psi[b,a] @ inv(psi[a,a])`` (shape |b| x |a|) and
the residual scale is the Schur complement ``psi[b,b] - B @ psi[a,b]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    DimensionGuardExceeded,
    EmptySampleSet,
    SingularInformation,
    SingularSubmatrix,
)
from .matcore import (
    DEFAULT_EPS_RATIO,
    LabeledSymMatrix,
    UnionIndex,
    build_union_index,
    embed,
    near_pd_values,
)

RIDGE_RATIO = 1e-10


@dataclass(frozen=True)
class PartialSampleSet:
    """Partial samples, their weights, and the union index they live in."""

    samples: tuple[LabeledSymMatrix, ...]
    weights: tuple[float, ...]
    index: UnionIndex

    def __post_init__(self):
        samples = tuple(self.samples)
        if len(samples) == 0:
            raise EmptySampleSet("need at least one partial sample")
        weights = tuple(float(w) for w in self.weights)
        if len(weights) != len(samples):
            raise ValueError(
                f"{len(weights)} weights for {len(samples)} samples"
            )
        for w in weights:
            if not (0.0 < w <= 1.0):
                raise ValueError(f"weights must lie in (0, 1], got {w!r}")
        if len(self.index.per_sample_positions) != len(samples):
            raise ValueError("index does not cover the same number of samples")
        for s, pos in zip(samples, self.index.per_sample_positions):
            if s.n != len(pos):
                raise ValueError("sample dimension disagrees with its positions")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[LabeledSymMatrix],
        weights: Optional[Sequence[float]] = None,
        order: str = "first-seen",
    ) -> "PartialSampleSet":
        index = build_union_index(samples, order=order)
        if weights is None:
            weights = [1.0] * len(samples)
        return cls(tuple(samples), tuple(weights), index)

    @property
    def n(self) -> int:
        """Total number of entities in the union."""
        return self.index.n

    @property
    def m(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class EMConfig:
    """Solver controls.

    ``nu=None`` resolves to ``n + 1``, the smallest valid value; the combined
    estimate itself is invariant to it. ``init=None`` starts from the
    identity. ``seed_order`` only changes the order per-sample terms are
    evaluated in; the reduction is always performed in input order, so both
    modes produce identical iterates.
    """

    nu: Optional[float] = None
    max_iter: int = 1000
    rel_tol: float = 1e-6
    pd_every_step: bool = True
    init: Optional[LabeledSymMatrix] = None
    seed_order: str = "fixed"
    compute_se: bool = False
    eps_ratio: float = DEFAULT_EPS_RATIO

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.seed_order not in ("fixed", "shuffled-per-iteration"):
            raise ValueError(f"unknown seed_order {self.seed_order!r}")

    def resolve_nu(self, n: int) -> float:
        nu = float(self.nu) if self.nu is not None else float(n + 1)
        if nu <= n:
            raise ValueError(f"nu must exceed the union size {n}, got {nu}")
        return nu


@dataclass(frozen=True)
class EMResult:
    """Fitted combined matrix plus the run's diagnostics."""

    sigma_hat: LabeledSymMatrix
    psi_hat: LabeledSymMatrix
    loglik_trace: tuple[float, ...]
    iterations: int
    converged: bool
    nu: float
    se: Optional[LabeledSymMatrix] = None


# ---------------------------------------------------------------------------
# Linear-algebra helpers
# ---------------------------------------------------------------------------


def _cho_factor(block: np.ndarray, what: str):
    """Cholesky with a single ridge-jitter retry, then SingularSubmatrix."""
    try:
        return scipy.linalg.cho_factor(block, lower=True)
    except np.linalg.LinAlgError:
        pass
    k = block.shape[0]
    ridge = RIDGE_RATIO * np.trace(block) / max(k, 1)
    if ridge <= 0:
        ridge = RIDGE_RATIO
    try:
        return scipy.linalg.cho_factor(block + ridge * np.eye(k), lower=True)
    except np.linalg.LinAlgError:
        raise SingularSubmatrix(f"observed block of {what} is singular") from None


def _sample_name(sset: PartialSampleSet, i: int) -> str:
    labels = sset.samples[i].labels
    shown = ",".join(labels[:4]) + (",..." if len(labels) > 4 else "")
    return f"sample {i} [{shown}]"


# ---------------------------------------------------------------------------
# Likelihood and E-step pieces
# ---------------------------------------------------------------------------


def partial_loglik(psi: LabeledSymMatrix, nu: float, sset: PartialSampleSet) -> float:
    """Observed-data log-likelihood up to its constant term.

    Sums ``-0.5 * (trace(inv(psi_aa) @ G_a) + nu * logdet(psi_aa))`` over the
    samples, where ``psi_aa`` is the scale restricted to each sample's
    positions.
    """
    psi_vals = _aligned_values(psi, sset)
    total = 0.0
    for i, (sample, pos) in enumerate(
        zip(sset.samples, sset.index.per_sample_positions)
    ):
        block = psi_vals[np.ix_(pos, pos)]
        try:
            cho = scipy.linalg.cho_factor(block, lower=True)
        except np.linalg.LinAlgError:
            raise SingularSubmatrix(
                f"scale restricted to {_sample_name(sset, i)} is singular"
            ) from None
        logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
        tr = np.trace(scipy.linalg.cho_solve(cho, sample.values))
        total += -0.5 * (tr + nu * logdet)
    return float(total)


def conditional_blocks(psi: LabeledSymMatrix, a: Sequence[int]):
    """Regression map and Schur complement of the complement given ``a``.

    Returns ``(B, schur)`` with ``B = psi[b,a] @ inv(psi[a,a])`` of shape
    |b| x |a| and ``schur = psi[b,b] - B @ psi[a,b]``; ``b`` is the ascending
    complement of ``a``.
    """
    obs = np.asarray(a, dtype=np.intp)
    mask = np.ones(psi.n, dtype=bool)
    mask[obs] = False
    comp = np.flatnonzero(mask)
    vals = psi.values
    block_aa = vals[np.ix_(obs, obs)]
    block_ab = vals[np.ix_(obs, comp)]
    cho = _cho_factor(block_aa, f"positions {obs.tolist()}")
    bmap = scipy.linalg.cho_solve(cho, block_ab).T
    schur = vals[np.ix_(comp, comp)] - bmap @ block_ab
    schur = 0.5 * (schur + schur.T)
    return bmap, schur


def expected_complete(
    G_a: LabeledSymMatrix,
    psi: LabeledSymMatrix,
    a: Optional[Sequence[int]] = None,
    nu: float = None,
) -> LabeledSymMatrix:
    """Conditional expectation of the full matrix given one observed block.

    The observed block stays as supplied; the cross block is ``B @ G_a`` and
    the unobserved diagonal block is ``nu * schur + B @ G_a @ B.T``, all
    scattered into the coordinates of ``psi``.
    """
    if nu is None:
        raise ValueError("nu is required")
    if a is None:
        obs = psi.positions(G_a.labels)
    else:
        obs = np.asarray(a, dtype=np.intp)
        if obs.size != G_a.n:
            raise ValueError("positions do not match the sample dimension")
    out = _expected_complete_values(G_a.values, psi.values, obs, float(nu))
    return LabeledSymMatrix(psi.labels, out)


def _expected_complete_values(
    g_vals: np.ndarray, psi_vals: np.ndarray, obs: np.ndarray, nu: float
) -> np.ndarray:
    n = psi_vals.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[obs] = False
    comp = np.flatnonzero(mask)
    out = np.zeros((n, n))
    out[np.ix_(obs, obs)] = g_vals
    if comp.size:
        block_aa = psi_vals[np.ix_(obs, obs)]
        block_ab = psi_vals[np.ix_(obs, comp)]
        cho = _cho_factor(block_aa, f"positions {obs.tolist()}")
        bmap = scipy.linalg.cho_solve(cho, block_ab).T
        schur = psi_vals[np.ix_(comp, comp)] - bmap @ block_ab
        cross = bmap @ g_vals
        out[np.ix_(comp, obs)] = cross
        out[np.ix_(obs, comp)] = cross.T
        bb = nu * schur + cross @ bmap.T
        out[np.ix_(comp, comp)] = 0.5 * (bb + bb.T)
    return out


# ---------------------------------------------------------------------------
# EM iteration
# ---------------------------------------------------------------------------


def _aligned_values(psi: LabeledSymMatrix, sset: PartialSampleSet) -> np.ndarray:
    """psi's values reordered to the union label order."""
    if psi.labels == sset.index.union_labels:
        return psi.values
    pos = psi.positions(sset.index.union_labels)
    return psi.values[np.ix_(pos, pos)]


def _em_step_values(
    psi_vals: np.ndarray, sset: PartialSampleSet, nu: float
) -> np.ndarray:
    terms = []
    for i, (sample, pos, w) in enumerate(
        zip(sset.samples, sset.index.per_sample_positions, sset.weights)
    ):
        g_vals = sample.values
        if w != 1.0:
            block_aa = psi_vals[np.ix_(pos, pos)]
            g_vals = w * g_vals + (1.0 - w) * nu * block_aa
        try:
            terms.append(_expected_complete_values(g_vals, psi_vals, pos, nu))
        except SingularSubmatrix:
            raise SingularSubmatrix(
                f"scale restricted to {_sample_name(sset, i)} is singular"
            ) from None
    # Fixed reduction order keeps runs bit-reproducible.
    total = np.zeros_like(psi_vals)
    for term in terms:
        total += term
    return total / (nu * len(terms))


def em_step(
    psi: LabeledSymMatrix, sset: PartialSampleSet, cfg: EMConfig = EMConfig()
) -> LabeledSymMatrix:
    """One scale update: average of the conditionally completed samples."""
    nu = cfg.resolve_nu(sset.n)
    vals = _em_step_values(_aligned_values(psi, sset), sset, nu)
    if cfg.pd_every_step:
        vals = near_pd_values(vals, cfg.eps_ratio)
    return LabeledSymMatrix(sset.index.union_labels, vals)


def combine(sset: PartialSampleSet, cfg: EMConfig = EMConfig()) -> EMResult:
    """Iterate the EM update until the scale stops moving.

    Convergence requires both the relative Frobenius change of the scale and
    the relative log-likelihood change to drop below ``cfg.rel_tol``. A run
    that hits ``max_iter`` first is reported with ``converged=False`` rather
    than raising.
    """
    n = sset.n
    nu = cfg.resolve_nu(n)
    if cfg.init is None:
        psi_vals = np.eye(n) / nu
    else:
        psi_vals = _aligned_values(cfg.init, sset) / nu
    labels = sset.index.union_labels

    trace: list[float] = []
    converged = False
    iterations = 0
    prev_ll = None
    for _ in range(cfg.max_iter):
        new_vals = _em_step_values(psi_vals, sset, nu)
        if cfg.pd_every_step:
            new_vals = near_pd_values(new_vals, cfg.eps_ratio)
        iterations += 1
        ll = partial_loglik(LabeledSymMatrix(labels, new_vals), nu, sset)
        trace.append(ll)
        delta = np.linalg.norm(new_vals - psi_vals) / max(
            np.linalg.norm(psi_vals), np.finfo(float).tiny
        )
        ll_flat = prev_ll is not None and abs(ll - prev_ll) <= cfg.rel_tol * max(
            1.0, abs(prev_ll)
        )
        psi_vals = new_vals
        prev_ll = ll
        if delta < cfg.rel_tol and (ll_flat or delta == 0.0):
            converged = True
            break

    psi_hat = LabeledSymMatrix(labels, psi_vals)
    sigma_hat = LabeledSymMatrix(labels, nu * psi_vals)
    result = EMResult(
        sigma_hat=sigma_hat,
        psi_hat=psi_hat,
        loglik_trace=tuple(trace),
        iterations=iterations,
        converged=converged,
        nu=nu,
    )
    if cfg.compute_se:
        se = asymptotic_se(result, sset, nu)
        result = EMResult(
            sigma_hat=sigma_hat,
            psi_hat=psi_hat,
            loglik_trace=tuple(trace),
            iterations=iterations,
            converged=converged,
            nu=nu,
            se=se,
        )
    return result


# ---------------------------------------------------------------------------
# Asymptotic standard errors
# ---------------------------------------------------------------------------


def _basis_pair_traces(P: np.ndarray, Q: np.ndarray, I1: np.ndarray, J1: np.ndarray):
    """Matrix of trace(D_p P D_q Q) over symmetric unit basis matrices.

    The basis matrix for parameter p is E[I_p,J_p] + E[J_p,I_p] off the
    diagonal and E[I_p,I_p] on it; P and Q are symmetric.
    """
    kap = np.where(I1 == J1, 0.5, 1.0)
    t1 = P[J1[:, None], I1[None, :]] * Q[I1[:, None], J1[None, :]]
    t2 = P[J1[:, None], J1[None, :]] * Q[I1[:, None], I1[None, :]]
    t3 = P[I1[:, None], I1[None, :]] * Q[J1[:, None], J1[None, :]]
    t4 = P[I1[:, None], J1[None, :]] * Q[J1[:, None], I1[None, :]]
    return (kap[:, None] * kap[None, :]) * (t1 + t2 + t3 + t4)


def information_matrix(
    psi: LabeledSymMatrix, sset: PartialSampleSet, nu: float
) -> np.ndarray:
    """Exact negative Hessian of partial_loglik over half-vectorized entries.

    Parameters are the n(n+1)/2 upper-triangle entries of the scale, ordered
    row-major; perturbing an off-diagonal parameter moves both mirrored
    entries. Contributions are additive over samples, and positions never
    co-observed give zero rows.
    """
    n = sset.n
    psi_vals = _aligned_values(psi, sset)
    rows, cols = np.triu_indices(n)
    gidx = {(int(j), int(k)): p for p, (j, k) in enumerate(zip(rows, cols))}
    p_total = rows.size
    info = np.zeros((p_total, p_total))
    for i, (sample, pos) in enumerate(
        zip(sset.samples, sset.index.per_sample_positions)
    ):
        k = pos.size
        block = psi_vals[np.ix_(pos, pos)]
        try:
            cho = scipy.linalg.cho_factor(block, lower=True)
        except np.linalg.LinAlgError:
            raise SingularSubmatrix(
                f"scale restricted to {_sample_name(sset, i)} is singular"
            ) from None
        w_inv = scipy.linalg.cho_solve(cho, np.eye(k))
        w_inv = 0.5 * (w_inv + w_inv.T)
        mid = w_inv @ sample.values @ w_inv
        mid = 0.5 * (mid + mid.T)
        lr, lc = np.triu_indices(k)
        local = _basis_pair_traces(w_inv, mid, lr, lc) - (nu / 2.0) * _basis_pair_traces(
            w_inv, w_inv, lr, lc
        )
        gj = pos[lr]
        gk = pos[lc]
        gmap = np.asarray(
            [gidx[(min(int(j), int(kk)), max(int(j), int(kk)))] for j, kk in zip(gj, gk)],
            dtype=np.intp,
        )
        info[np.ix_(gmap, gmap)] += local
    return info


def asymptotic_se(
    result: EMResult,
    sset: PartialSampleSet,
    nu: Optional[float] = None,
    max_dim: int = 200,
) -> LabeledSymMatrix:
    """Entrywise asymptotic standard errors for the combined estimate.

    Inverts the information matrix of the observed-data log-likelihood at the
    fitted scale and rescales by ``nu`` so the errors refer to
    ``sigma = nu * psi``.
    """
    n = sset.n
    if n > max_dim:
        raise DimensionGuardExceeded(
            f"information matrix needs {n}({n}+1)/2 parameters; guard is n <= {max_dim}"
        )
    nu = float(nu) if nu is not None else result.nu
    info = information_matrix(result.psi_hat, sset, nu)
    if not np.all(np.abs(info).sum(axis=1) > 0):
        raise SingularInformation(
            "some entry pairs are never co-observed; their information is zero"
        )
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularInformation("information matrix is singular") from None
    var = np.diag(cov)
    if np.any(var < 0):
        raise SingularInformation(
            "information matrix is not positive definite at the estimate"
        )
    rows, cols = np.triu_indices(n)
    se_vals = np.zeros((n, n))
    se_vals[rows, cols] = np.sqrt(var)
    se_vals[cols, rows] = se_vals[rows, cols]
    return LabeledSymMatrix(sset.index.union_labels, nu * se_vals)

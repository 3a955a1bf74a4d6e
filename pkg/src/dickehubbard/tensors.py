"""Dense tensor primitives: contraction, truncated SVD splits, Lanczos eigensolver.

Tensors are plain numpy arrays (row-major).  These are the only building
blocks the MPS/MPO layer needs: a checked pairwise contraction, an SVD that
splits a tensor across a chosen bipartition with truncation bookkeeping, and
an iterative lowest-eigenpair solver for the local problems of the
ground-state sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SvdTruncation:
    """Truncation rule for SVD splits.

    max_rank: maximum number of singular values kept (the bond dimension D)
    cutoff  : discard singular values below cutoff * s_max
    """

    max_rank: int = 12
    cutoff: float = 1e-10

    def __post_init__(self):
        if self.max_rank < 1:
            raise ValueError("max_rank must be >= 1")
        if not (0.0 <= self.cutoff < 1.0):
            raise ValueError("cutoff must be in [0, 1)")


def contract(t1: np.ndarray, t2: np.ndarray, axes) -> np.ndarray:
    """Contract paired axes of two tensors.

    ``axes`` is a pair (axes1, axes2) of equal-length sequences.  Output axis
    order is the unpaired axes of t1 followed by those of t2.
    """
    ax1, ax2 = axes
    ax1 = [ax1] if np.isscalar(ax1) else list(ax1)
    ax2 = [ax2] if np.isscalar(ax2) else list(ax2)
    if len(ax1) != len(ax2):
        raise ValueError("axis lists must have equal length")
    for i, j in zip(ax1, ax2):
        if t1.shape[i] != t2.shape[j]:
            raise ValueError(
                f"axis length mismatch: t1 axis {i} has {t1.shape[i]}, "
                f"t2 axis {j} has {t2.shape[j]}")
    return np.tensordot(t1, t2, axes=(ax1, ax2))


def svd_split(t: np.ndarray, left_axes, trunc: SvdTruncation | None = None):
    """Split a tensor across (left_axes | remaining axes) by truncated SVD.

    Returns (u, s, v, discarded_weight) with t ~= u . diag(s) . v where u has
    shape left_shape + (k,), v has shape (k,) + right_shape, and
    discarded_weight = sum of squared dropped singular values over the total
    squared spectrum.
    """
    if trunc is None:
        trunc = SvdTruncation()
    left_axes = [left_axes] if np.isscalar(left_axes) else sorted(left_axes)
    ndim = t.ndim
    if not left_axes or len(left_axes) >= ndim:
        raise ValueError("left_axes must be a nonempty proper subset of axes")
    if any(ax < 0 or ax >= ndim for ax in left_axes):
        raise ValueError("axis out of range")
    right_axes = [ax for ax in range(ndim) if ax not in left_axes]

    perm = left_axes + right_axes
    left_shape = [t.shape[ax] for ax in left_axes]
    right_shape = [t.shape[ax] for ax in right_axes]
    mat = t.transpose(perm).reshape(int(np.prod(left_shape)), int(np.prod(right_shape)))

    try:
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but sturdier
        import scipy.linalg
        u, s, vh = scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")

    total = float(np.sum(s**2))
    keep = min(trunc.max_rank, len(s))
    if total > 0.0 and trunc.cutoff > 0.0:
        above = int(np.sum(s >= trunc.cutoff * s[0]))
        keep = min(keep, max(above, 1))
    discarded = float(np.sum(s[keep:] ** 2) / total) if total > 0.0 else 0.0

    u = u[:, :keep].reshape(left_shape + [keep])
    v = vh[:keep].reshape([keep] + right_shape)
    return u, s[:keep].copy(), v, discarded


def _default_block(dim: int, max_iter: int) -> int:
    # cap the stored Krylov basis around 400 MB
    mem_cap = max(10, int(4e8 / (8 * max(dim, 1))))
    return max(2, min(dim, max_iter, 200, mem_cap))


class _Cycle:
    """One Krylov block with full reorthogonalization."""

    def __init__(self, apply, basis, counter):
        self.apply = apply
        self.basis = basis
        self.counter = counter

    def run(self, v, tol, budget):
        """Iterate from unit vector v; returns (val, vec, res, broke_down)."""
        basis = self.basis
        block = basis.shape[0]
        basis[0] = v
        hv = self.apply(v)
        self.counter[0] += 1
        alpha = [float(v @ hv)]
        beta = []
        res = float(np.linalg.norm(hv - alpha[0] * v))
        val, vec = alpha[0], v
        if res <= tol * max(1.0, abs(val)):
            return val, vec, res, False, 1
        broke_down = False
        k = 1
        tvecs = np.ones((1, 1))
        while True:
            # next Lanczos residual; its norm is the exact Ritz-residual
            # scale beta_k for the current T_k
            r = hv - alpha[-1] * basis[k - 1]
            if k > 1:
                r -= beta[-1] * basis[k - 2]
            q = basis[:k]
            coeff = q @ r
            r -= coeff @ q
            nr = float(np.linalg.norm(r))
            if nr < 0.7 * float(np.linalg.norm(coeff)):
                r -= (q @ r) @ q
                nr = float(np.linalg.norm(r))

            tmat = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
            tvals, tvecs = np.linalg.eigh(tmat)
            val = float(tvals[0])
            if nr < 1e-13 * max(1.0, abs(alpha[0])):
                broke_down = True
                break
            est = nr * abs(tvecs[-1, 0])
            if est <= 0.5 * tol * max(1.0, abs(val)) or k == block \
                    or self.counter[0] >= budget:
                break
            basis[k] = r / nr
            beta.append(nr)
            hv = self.apply(basis[k])
            self.counter[0] += 1
            alpha.append(float(basis[k] @ hv))
            k += 1

        vec = tvecs[:, 0] @ basis[:k]
        nv = float(np.linalg.norm(vec))
        if nv > 0.0:
            vec = vec / nv
        hv2 = self.apply(vec)
        self.counter[0] += 1
        val = float(vec @ hv2)
        res = float(np.linalg.norm(hv2 - val * vec))
        return val, vec, res, broke_down, k


def lanczos_lowest(apply, dim: int, v0: np.ndarray, tol: float = 1e-10,
                   max_iter: int = 200, block_size: int = 0, rng=None,
                   verify="always"):
    """Lowest eigenpair of a symmetric linear map by restarted Lanczos.

    ``apply`` maps a vector of length ``dim`` to another (symmetry is the
    caller's contract).  Converged when ||H v - lam v|| <= tol * max(1, |lam|).
    Full reorthogonalization is used within each Krylov block; restarts
    continue from the current Ritz vector.

    A converged residual alone cannot tell the ground state from an excited
    eigenvector when v0 has no ground-state overlap, so a short randomized
    probe cycle can be run once after convergence, resuming iteration if it
    uncovers lower spectrum: ``verify`` is "always" (or True), "suspicious"
    (probe only when convergence came suspiciously fast, the invariant-
    subspace signature), or "off" (False).  ``max_iter`` bounds the total
    number of matvecs.

    Returns (eigenvalue, eigenvector); raises RuntimeError with the best
    residual if the budget is exhausted before reaching tol.
    """
    if rng is None:
        rng = np.random.default_rng(20240201)
    v0 = np.asarray(v0, dtype=float).ravel()
    if v0.shape[0] != dim:
        raise ValueError("v0 has wrong length")
    nrm = np.linalg.norm(v0)
    if nrm == 0.0:
        raise ValueError("v0 must be nonzero")
    if block_size <= 0:
        block_size = _default_block(dim, max_iter)
    block_size = max(2, min(block_size, dim))

    basis = np.empty((block_size, dim))
    counter = [0]
    cycle = _Cycle(apply, basis, counter)

    if verify is True:
        verify = "always"
    elif verify is False:
        verify = "off"
    if verify not in ("always", "suspicious", "off"):
        raise ValueError("verify must be 'always', 'suspicious' or 'off'")

    v = v0 / nrm
    best = (np.inf, v, np.inf)   # (val, vec, res)
    probed = False

    while counter[0] < max_iter:
        val, vec, res, broke_down, k_used = cycle.run(v, tol, max_iter)
        if val < best[0]:
            best = (val, vec, res)

        if res <= tol * max(1.0, abs(val)):
            want_probe = verify == "always" or (verify == "suspicious"
                                                and k_used <= 2)
            if want_probe and not probed and dim > 1:
                probed = True
                w = rng.standard_normal(dim)
                w -= (vec @ w) * vec
                wn = np.linalg.norm(w)
                if wn > 0:
                    pbasis = basis[: min(block_size, 8)]
                    probe = _Cycle(apply, pbasis, counter)
                    pval, pvec, pres, _, _ = probe.run(
                        w / wn, tol, min(max_iter, counter[0] + 10))
                    if pval < val - 1e-11 * max(1.0, abs(val)):
                        # lower spectrum exists: keep iterating from the probe
                        v = pvec
                        if pval < best[0]:
                            best = (pval, pvec, pres)
                        continue
            return val, vec

        v = vec
        if broke_down:
            v = v + 1e-7 * rng.standard_normal(dim)
            v /= np.linalg.norm(v)

    val, vec, res = best
    if res <= tol * max(1.0, abs(val)):
        return val, vec
    raise RuntimeError(
        f"lanczos_lowest: no convergence after {counter[0]} matvecs "
        f"(best residual {res:.3e}, eigenvalue {val:.12g})")

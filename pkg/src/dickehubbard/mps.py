"""Matrix product states: canonical forms, measurements, and two-site DMRG.

Site tensors have index order (bond-left, physical, bond-right).  States are
real throughout; canonicalization normalizes.  The ground-state search is a
two-site sweep: the local eigenproblem is solved with the restarted Lanczos
of :mod:`dickehubbard.tensors`, applied through cached block-sparse kernels
built from the MPO's (bond, bond, operator) structure so each matvec is a
handful of BLAS calls plus one sparse matrix product.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .mpo import MPO, _env_step
from .tensors import SvdTruncation, lanczos_lowest, svd_split

CHECKPOINT_MAGIC = b"DHMP"
CHECKPOINT_VERSION = 1


class MPS:
    """Matrix product state with optional canonical-center bookkeeping."""

    def __init__(self, tensors, center: int | None = None):
        self.tensors = list(tensors)
        self.center = center

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def phys_dims(self):
        return [t.shape[1] for t in self.tensors]

    @property
    def bond_dims(self):
        return [t.shape[0] for t in self.tensors] + [self.tensors[-1].shape[2]]

    @property
    def max_bond_dim(self) -> int:
        return max(self.bond_dims)

    def copy(self) -> "MPS":
        return MPS([t.copy() for t in self.tensors], self.center)


def product_mps(local_states) -> MPS:
    """Bond-dimension-1 normalized MPS from per-site state vectors."""
    tensors = []
    for vec in local_states:
        vec = np.asarray(vec, dtype=float)
        nrm = np.linalg.norm(vec)
        if nrm == 0.0:
            raise ValueError("local state vector must be nonzero")
        tensors.append((vec / nrm).reshape(1, -1, 1))
    return MPS(tensors, center=0)


def canonicalize(state: MPS, center: int = 0) -> MPS:
    """Mixed-canonical form at ``center``; returns a normalized copy."""
    m = state.n_sites
    if not (0 <= center < m):
        raise ValueError("center out of range")
    tensors = [t.copy() for t in state.tensors]
    for i in range(center):
        dl, d, dr = tensors[i].shape
        q, r = np.linalg.qr(tensors[i].reshape(dl * d, dr))
        k = q.shape[1]
        tensors[i] = q.reshape(dl, d, k)
        tensors[i + 1] = np.tensordot(r, tensors[i + 1], axes=(1, 0))
    for i in range(m - 1, center, -1):
        dl, d, dr = tensors[i].shape
        q, r = np.linalg.qr(tensors[i].reshape(dl, d * dr).T)
        k = q.shape[1]
        tensors[i] = q.T.reshape(k, d, dr)
        tensors[i - 1] = np.tensordot(tensors[i - 1], r.T, axes=(2, 0))
    nrm = np.linalg.norm(tensors[center])
    if nrm == 0.0:
        raise ValueError("state has zero norm")
    tensors[center] = tensors[center] / nrm
    return MPS(tensors, center=center)


def overlap(s1: MPS, s2: MPS) -> float:
    """<s1|s2> (states are real)."""
    if s1.n_sites != s2.n_sites:
        raise ValueError("site count mismatch")
    env = np.ones((1, 1))
    for a, b in zip(s1.tensors, s2.tensors):
        tmp = np.tensordot(env, b, axes=(1, 0))          # (D1, d, D2')
        env = np.tensordot(a, tmp, axes=([0, 1], [0, 1]))
    return float(env[0, 0])


def _transfer(env: np.ndarray, bra: np.ndarray, ket: np.ndarray,
              op: np.ndarray | None = None) -> np.ndarray:
    """Advance a (bra, ket) environment through one site, optionally with op."""
    tmp = np.tensordot(env, ket, axes=(1, 0))            # (Db, d, Dk')
    if op is not None:
        tmp = np.tensordot(op, tmp, axes=(1, 1)).transpose(1, 0, 2)
    return np.tensordot(bra, tmp, axes=([0, 1], [0, 1]))


def site_expectation(state: MPS, site: int, op: np.ndarray) -> float:
    """<state| op_site |state> for a dense single-site operator."""
    if not (0 <= site < state.n_sites):
        raise ValueError("site out of range")
    psi = state if state.center == site else canonicalize(state, site)
    a = psi.tensors[site]
    rho_free = np.tensordot(a, a, axes=([0, 2], [0, 2]))  # (d, d)
    return float(np.sum(rho_free * op.T))


def sweep_site_expectations(state: MPS, ops) -> np.ndarray:
    """<op_k> at every site for a list of single-site operators.

    One canonicalization plus one left-to-right center sweep; returns an
    array of shape (len(ops), n_sites).
    """
    psi = canonicalize(state, 0)
    m = psi.n_sites
    out = np.empty((len(ops), m))
    for site in range(m):
        a = psi.tensors[site]
        rho = np.tensordot(a, a, axes=([0, 2], [0, 2]))
        for k, op in enumerate(ops):
            out[k, site] = float(np.sum(rho * op.T))
        if site < m - 1:
            dl, d, dr = a.shape
            q, r = np.linalg.qr(a.reshape(dl * d, dr))
            psi.tensors[site] = q.reshape(dl, d, q.shape[1])
            psi.tensors[site + 1] = np.tensordot(r, psi.tensors[site + 1], axes=(1, 0))
    return out


def two_point(state: MPS, site_i: int, op_i: np.ndarray,
              site_j: int, op_j: np.ndarray) -> float:
    """<op_i(site_i) op_j(site_j)> with identity transfer in between."""
    if not (0 <= site_i < site_j < state.n_sites):
        raise ValueError("need 0 <= site_i < site_j < n_sites")
    psi = state if state.center == site_i else canonicalize(state, site_i)
    a = psi.tensors[site_i]
    tmp = np.tensordot(op_i, a, axes=(1, 1)).transpose(1, 0, 2)
    env = np.tensordot(a, tmp, axes=([0, 1], [0, 1]))     # (Dr_bra, Dr_ket)
    for site in range(site_i + 1, site_j):
        env = _transfer(env, psi.tensors[site], psi.tensors[site])
    b = psi.tensors[site_j]
    env = _transfer(env, b, b, op_j)
    return float(np.trace(env))


def string_expectation(state: MPS, ops) -> float:
    """Expectation of a product operator with one factor per site (None = identity)."""
    if len(ops) != state.n_sites:
        raise ValueError("need one operator (or None) per site")
    psi = state if state.center is not None else canonicalize(state, 0)
    env = np.ones((1, 1))
    for a, op in zip(psi.tensors, ops):
        env = _transfer(env, a, a, op)
    return float(env[0, 0])


def reduced_density(state: MPS, sites, dim_cap: int = 16384) -> np.ndarray:
    """Reduced density matrix of a window of 1 or 2 contiguous sites."""
    sites = sorted([sites]) if np.isscalar(sites) else sorted(sites)
    if len(sites) not in (1, 2):
        raise ValueError("window length must be 1 or 2")
    if len(sites) == 2 and sites[1] != sites[0] + 1:
        raise ValueError("window must be contiguous")
    if not (0 <= sites[0] and sites[-1] < state.n_sites):
        raise ValueError("window out of range")
    dims = [state.phys_dims[s] for s in sites]
    if int(np.prod(dims)) > dim_cap:
        raise ValueError(f"window dimension {int(np.prod(dims))} exceeds cap {dim_cap}")
    psi = state if state.center == sites[0] else canonicalize(state, sites[0])
    if len(sites) == 1:
        a = psi.tensors[sites[0]]
        return np.tensordot(a, a, axes=([0, 2], [0, 2]))
    theta = np.tensordot(psi.tensors[sites[0]], psi.tensors[sites[1]], axes=(2, 0))
    rho = np.tensordot(theta, theta, axes=([0, 3], [0, 3]))   # (p1, p2, q1, q2)
    d2 = dims[0] * dims[1]
    return rho.reshape(d2, d2)


def save_mps(path, state: MPS) -> None:
    """Binary checkpoint: see README for the exact little-endian layout."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIi", CHECKPOINT_VERSION, state.n_sites,
                             -1 if state.center is None else state.center))
        for t in state.tensors:
            fh.write(struct.pack("<III", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_mps(path) -> MPS:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError("not an MPS checkpoint")
        version, n, center = struct.unpack("<IIi", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        tensors = []
        for _ in range(n):
            shape = struct.unpack("<III", fh.read(12))
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(float)
            tensors.append(data.reshape(shape))
    return MPS(tensors, center=None if center < 0 else center)


# ---------------------------------------------------------------------------
# two-site DMRG


@dataclass(frozen=True)
class DmrgOptions:
    """Controls for the two-site ground-state sweep.

    ``noise`` perturbs the optimized two-site tensors during the first
    ``noise_sweeps`` sweeps (helps escape symmetric manifolds from poor
    seeds); ``rank_schedule`` optionally caps the bond dimension per sweep so
    early sweeps run cheap.  ``verify_lanczos`` enables the randomized
    ground-state probe on first-sweep local solves.
    """

    max_sweeps: int = 60
    energy_tol: float = 1e-10
    trunc: SvdTruncation = field(default_factory=SvdTruncation)
    lanczos_tol: float = 1e-8
    lanczos_max_iter: int = 500
    lanczos_block: int = 36
    noise: float = 1e-8
    noise_sweeps: int = 2
    seed: int = 1234
    rank_schedule: tuple | None = None
    verify_lanczos: bool = True

    def __post_init__(self):
        if self.energy_tol <= 0:
            raise ValueError("energy_tol must be positive")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


@dataclass
class SweepRecord:
    sweep: int
    energy: float
    max_discarded: float
    max_bond: int
    lanczos_matvecs: int


@dataclass
class DmrgDiagnostics:
    sweeps: list
    converged: bool

    @property
    def n_sweeps(self) -> int:
        return len(self.sweeps)


class _BondKernel:
    """Two-site effective-Hamiltonian kernel for one (site, site+1) block pair.

    Combines the two MPO site block lists into a single stacked sparse matrix
    acting on the physical pair index, so a matvec is: one dense contraction
    with the left environment, one sparse product, one dense contraction with
    the right environment.
    """

    def __init__(self, blocks_l, blocks_r, wl: int, wr: int, d: int):
        self.wl, self.wr, self.d = wl, wr, d
        grid = [[None] * wl for _ in range(wr)]
        eye = scipy.sparse.identity(d, format="csr")
        for bl, bm, op1 in blocks_l:
            s1 = eye if op1 is None else scipy.sparse.csr_matrix(op1)
            for bm2, br, op2 in blocks_r:
                if bm2 != bm:
                    continue
                s2 = eye if op2 is None else scipy.sparse.csr_matrix(op2)
                term = scipy.sparse.kron(s1, s2, format="csr")
                cell = grid[br][bl]
                grid[br][bl] = term if cell is None else cell + term
        d2 = d * d
        empty = scipy.sparse.csr_matrix((d2, d2))
        rows = [[cell if cell is not None else empty for cell in row] for row in grid]
        self.smat = scipy.sparse.bmat(rows, format="csr")
        self.smat.sum_duplicates()

    def bind(self, lenv: np.ndarray, renv: np.ndarray):
        """Return (matvec, dim) for the given environments."""
        wl, wr, d = self.wl, self.wr, self.d
        dl, dr = lenv.shape[1], renv.shape[1]
        lmat = lenv.reshape(wl * dl, dl)        # rows (w0, al_bra)
        rts = [np.ascontiguousarray(renv[k].T) for k in range(wr)]
        d2 = d * d
        dim = dl * d2 * dr
        smat = self.smat

        def apply(x):
            t = lmat @ x.reshape(dl, d2 * dr)                 # (w0*al, d2*dr)
            t = t.reshape(wl, dl, d2, dr).transpose(0, 2, 1, 3)
            t = np.ascontiguousarray(t).reshape(wl * d2, dl * dr)
            v = smat @ t                                      # (wr*d2, dl*dr)
            v = v.reshape(wr, d2, dl, dr)
            out = np.matmul(v[0].reshape(d2 * dl, dr), rts[0])
            for k in range(1, wr):
                out += np.matmul(v[k].reshape(d2 * dl, dr), rts[k])
            out = out.reshape(d2, dl, dr).transpose(1, 0, 2)
            return out.reshape(dim)

        return apply, dim


_KERNEL_CACHE: dict = {}
_KERNEL_CACHE_MAX = 24


def _get_kernel(blocks_l, blocks_r, wl: int, wr: int, d: int) -> _BondKernel:
    """Bond kernels cached on block-list identity (bulk lists are shared)."""
    key = (id(blocks_l), id(blocks_r), wl, wr, d)
    hit = _KERNEL_CACHE.get(key)
    if hit is not None and hit[0] is blocks_l and hit[1] is blocks_r:
        _KERNEL_CACHE.pop(key)          # LRU: refresh insertion order
        _KERNEL_CACHE[key] = hit
        return hit[2]
    kern = _BondKernel(blocks_l, blocks_r, wl, wr, d)
    if len(_KERNEL_CACHE) >= _KERNEL_CACHE_MAX:
        _KERNEL_CACHE.pop(next(iter(_KERNEL_CACHE)))
    _KERNEL_CACHE[key] = (blocks_l, blocks_r, kern)
    return kern


def _right_env_step(env, site_blocks, wl_dim, bra, ket):
    """Advance a right environment (wr, Dbra, Dket) through one site leftward."""
    new = np.zeros((wl_dim, bra.shape[0], ket.shape[0]))
    for bl, br, op in site_blocks:
        tmp = np.tensordot(ket, env[br], axes=(2, 1))       # (Dk, d, Dbra)
        if op is not None:
            tmp = np.tensordot(op, tmp, axes=(1, 1)).transpose(1, 0, 2)
        new[bl] += np.tensordot(bra, tmp, axes=([1, 2], [1, 2]))
    return new


def _solve_m1(op: MPO, opts: DmrgOptions):
    """Single-site cluster: directly diagonalize the (d, d) block sum."""
    d = op.phys_dim
    h = np.zeros((d, d))
    for bl, br, blk in op.blocks[0]:
        h += np.eye(d) if blk is None else blk
    vals, vecs = scipy.linalg.eigh(h, subset_by_index=[0, 0])
    state = MPS([vecs[:, 0].reshape(1, d, 1)], center=0)
    diag = DmrgDiagnostics(
        sweeps=[SweepRecord(0, float(vals[0]), 0.0, 1, 0)], converged=True)
    return float(vals[0]), state, diag


def dmrg_ground_state(op: MPO, init: MPS, opts: DmrgOptions | None = None):
    """Variational ground state of an MPO by two-site sweeps.

    Returns (energy, state, diagnostics).  The state comes back canonical at
    site 0.  Non-convergence after ``max_sweeps`` returns the best state with
    ``diagnostics.converged`` False.
    """
    if opts is None:
        opts = DmrgOptions()
    m = op.n_sites
    if init.n_sites != m:
        raise ValueError("site count mismatch")
    if any(pd != op.phys_dim for pd in init.phys_dims):
        raise ValueError("physical dimension mismatch")
    if m == 1:
        return _solve_m1(op, opts)

    rng = np.random.default_rng(opts.seed)
    psi = canonicalize(init, 0)
    d = op.phys_dim

    def kernel(mm):
        return _get_kernel(op.blocks[mm], op.blocks[mm + 1],
                           op.bond_dims[mm], op.bond_dims[mm + 2], d)

    lenv = [None] * (m + 1)
    renv = [None] * (m + 1)
    lenv[0] = np.ones((1, 1, 1))
    renv[m] = np.ones((1, 1, 1))
    for mm in range(m - 1, 0, -1):
        renv[mm] = _right_env_step(renv[mm + 1], op.blocks[mm],
                                   op.bond_dims[mm], psi.tensors[mm], psi.tensors[mm])

    sweeps = []
    converged = False
    prev_energy = None
    energy = np.inf

    for sweep in range(opts.max_sweeps):
        if opts.rank_schedule is not None:
            idx = min(sweep, len(opts.rank_schedule) - 1)
            rank = min(opts.rank_schedule[idx], opts.trunc.max_rank)
        else:
            rank = opts.trunc.max_rank
        trunc = SvdTruncation(rank, opts.trunc.cutoff)
        noise_amp = opts.noise if sweep < opts.noise_sweeps else 0.0
        full_rank = rank == opts.trunc.max_rank
        # early sweeps only rough out the state; solve them loosely
        lan_tol = opts.lanczos_tol
        if noise_amp > 0.0 or not full_rank:
            lan_tol = max(opts.lanczos_tol, 1e-6)
        max_disc = 0.0
        matvecs = 0
        e_first = None

        def local_update(mm, to_right):
            nonlocal energy, max_disc, matvecs, e_first
            theta = np.tensordot(psi.tensors[mm], psi.tensors[mm + 1], axes=(2, 0))
            shape = theta.shape
            apply, dim = kernel(mm).bind(lenv[mm], renv[mm + 2])

            def counted(x):
                nonlocal matvecs
                matvecs += 1
                return apply(x)

            if not opts.verify_lanczos:
                verify = "off"
            elif sweep == 0:
                verify = "always" if (mm == 0 and to_right) else "suspicious"
            else:
                verify = "suspicious" if noise_amp == 0.0 else "off"

            val, vec = lanczos_lowest(
                counted, dim, theta.reshape(-1), tol=lan_tol,
                max_iter=opts.lanczos_max_iter, block_size=opts.lanczos_block,
                rng=rng, verify=verify)
            energy = val
            if e_first is None:
                e_first = val
            theta = vec.reshape(shape)
            if noise_amp > 0.0:
                theta = theta + noise_amp * rng.standard_normal(shape)
                theta /= np.linalg.norm(theta)
            u, s, v, disc = svd_split(theta, [0, 1], trunc)
            max_disc = max(max_disc, disc)
            if to_right:
                psi.tensors[mm] = u
                psi.tensors[mm + 1] = s[:, None, None] * v
                psi.center = mm + 1
                lenv[mm + 1] = _env_step(lenv[mm], op.blocks[mm], op.bond_dims[mm],
                                         op.bond_dims[mm + 1], psi.tensors[mm],
                                         psi.tensors[mm])
            else:
                psi.tensors[mm + 1] = v
                psi.tensors[mm] = u * s[None, None, :]
                psi.center = mm
                renv[mm + 1] = _right_env_step(renv[mm + 2], op.blocks[mm + 1],
                                               op.bond_dims[mm + 1],
                                               psi.tensors[mm + 1], psi.tensors[mm + 1])

        for mm in range(m - 1):
            local_update(mm, to_right=True)
        for mm in range(m - 2, -1, -1):
            local_update(mm, to_right=False)

        sweeps.append(SweepRecord(sweep, energy, max_disc, psi.max_bond_dim, matvecs))

        if noise_amp == 0.0 and full_rank:
            intra = abs(e_first - energy)
            inter = abs(prev_energy - energy) if prev_energy is not None else np.inf
            if intra < opts.energy_tol or inter < opts.energy_tol:
                converged = True
                break
        prev_energy = energy

    psi.tensors[psi.center] /= np.linalg.norm(psi.tensors[psi.center])
    state = canonicalize(psi, 0)
    return float(energy), state, DmrgDiagnostics(sweeps=sweeps, converged=converged)

"""Matrix product operator for the cluster Hamiltonian with mean-field boundaries.

The cluster Hamiltonian is

    H = sum_m H_D(m) - J sum_{m<M} (a_m^dag a_{m+1} + a_m a_{m+1}^dag)
        - J psi_R (a_1^dag + a_1) - J psi_L (a_M^dag + a_M)

where psi_R is the mean field entering site 1 (the self-consistent <a> of the
right edge of the neighboring cluster) and psi_L the field entering site M.
Both fields are real: the Hamiltonian is real symmetric and a real gauge for
<a> is fixed throughout.

The bond-dimension-4 operator-valued matrix is, for a bulk site,

        ( I                )
        ( -J a             )
        ( -J a^dag         )
        ( H_D  a^dag  a  I )

with site 1 carrying the bottom row (plus its boundary term in the H_D slot)
and site M the first column (plus its boundary term).  Sites are stored as
sparse lists of (bond-left, bond-right, operator) blocks; ``None`` marks an
identity block and exactly-zero blocks are dropped, so a J=0 operator carries
no hopping paths at all.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, build_site_hamiltonian, cached_local_ops


@dataclass(frozen=True)
class BoundaryFields:
    """Real mean fields closing the cluster: psi_r enters site 1, psi_l site M."""

    psi_l: float = 0.0
    psi_r: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.psi_l) and np.isfinite(self.psi_r)):
            raise ValueError("boundary fields must be finite")


class MPO:
    """Cluster Hamiltonian in matrix product form.

    blocks[m] is a list of (wl, wr, op) entries, op a dense (d, d) array or
    None for the identity.  Bulk sites share one block list, so kernel caches
    keyed on ``id(blocks[m])`` stay small.
    """

    def __init__(self, blocks, phys_dim: int, bond_dims):
        self.blocks = blocks
        self.phys_dim = phys_dim
        self.bond_dims = tuple(bond_dims)   # len M+1, starts and ends with 1

    @property
    def n_sites(self) -> int:
        return len(self.blocks)

    @property
    def site_tensors(self):
        """Dense rank-4 tensors (bond-left, phys-out, phys-in, bond-right)."""
        d = self.phys_dim
        out = []
        for m, blk in enumerate(self.blocks):
            wl, wr = self.bond_dims[m], self.bond_dims[m + 1]
            t = np.zeros((wl, d, d, wr))
            for bl, br, op in blk:
                t[bl, :, :, br] += np.eye(d) if op is None else op
            out.append(t)
        return out

    def to_matrix(self, dim_cap: int = 20000) -> np.ndarray:
        """Contract all bonds to the dense (d^M, d^M) matrix (small M only)."""
        d = self.phys_dim
        total = d ** self.n_sites
        if total > dim_cap:
            raise ValueError(f"contracted dimension {total} exceeds cap {dim_cap}")
        tensors = self.site_tensors
        t = tensors[0]
        for w in tensors[1:]:
            t = np.tensordot(t, w, axes=([-1], [0]))
        t = t.reshape(t.shape[1:-1])     # strip the trivial edge bonds
        m = self.n_sites
        perm = list(range(0, 2 * m, 2)) + list(range(1, 2 * m, 2))
        return t.transpose(perm).reshape(total, total)


def _add_block(blocklist, wl, wr, op):
    if op is None or np.count_nonzero(op):
        blocklist.append((wl, wr, op))


@functools.lru_cache(maxsize=8)
def _cluster_pieces(params: ModelParams):
    """Field-independent pieces: (hd, a, a_dag, bulk block list).

    The bulk block list is cached per params so repeated MPO builds (the
    mean-field outer loop) share one object, which keeps downstream
    bond-kernel caches hot.
    """
    ops = cached_local_ops(params)
    hd = build_site_hamiltonian(params, ops).matrix
    j = params.hop_j
    bulk = []
    _add_block(bulk, 0, 0, None)
    _add_block(bulk, 1, 0, -j * ops.a)
    _add_block(bulk, 2, 0, -j * ops.a_dag)
    _add_block(bulk, 3, 0, hd)
    _add_block(bulk, 3, 1, ops.a_dag)
    _add_block(bulk, 3, 2, ops.a)
    _add_block(bulk, 3, 3, None)
    return hd, ops.a, ops.a_dag, bulk


def build_cluster_mpo(params: ModelParams, m_sites: int,
                      fields: BoundaryFields | None = None) -> MPO:
    """Build the cluster MPO for ``m_sites`` cavities with boundary fields.

    For m_sites == 1 both boundary terms attach to the single site.
    """
    if m_sites < 1:
        raise ValueError("m_sites must be >= 1")
    if fields is None:
        fields = BoundaryFields()
    hd, a, a_dag, bulk = _cluster_pieces(params)
    j = params.hop_j

    def boundary(psi):
        return -j * psi * (a_dag + a)

    if m_sites == 1:
        h = hd + boundary(fields.psi_r) + boundary(fields.psi_l)
        return MPO([[(0, 0, h)]], params.site_dim, (1, 1))

    first = []
    _add_block(first, 0, 0, hd + boundary(fields.psi_r))
    _add_block(first, 0, 1, a_dag)
    _add_block(first, 0, 2, a)
    _add_block(first, 0, 3, None)

    last = []
    _add_block(last, 0, 0, None)
    _add_block(last, 1, 0, -j * a)
    _add_block(last, 2, 0, -j * a_dag)
    _add_block(last, 3, 0, hd + boundary(fields.psi_l))

    blocks = [first] + [bulk] * (m_sites - 2) + [last]
    bonds = (1,) + (4,) * (m_sites - 1) + (1,)
    return MPO(blocks, params.site_dim, bonds)


def _env_step(env: np.ndarray, site_blocks, wl_dim: int, wr_dim: int,
              bra: np.ndarray, ket: np.ndarray) -> np.ndarray:
    """Advance a left environment (wl, Dbra, Dket) through one site."""
    new = np.zeros((wr_dim, bra.shape[2], ket.shape[2]))
    for bl, br, op in site_blocks:
        tmp = np.tensordot(env[bl], ket, axes=(1, 0))        # (Dbra, d, Dk')
        if op is not None:
            tmp = np.tensordot(tmp, op, axes=(1, 1))         # (Dbra, Dk', d)
            tmp = tmp.transpose(0, 2, 1)
        new[br] += np.tensordot(bra, tmp, axes=([0, 1], [0, 1]))
    return new


def mpo_expectation(state, op: MPO) -> float:
    """<state| op |state> by a left-to-right environment sweep (cost O(M))."""
    tensors = state.tensors
    if len(tensors) != op.n_sites:
        raise ValueError("site count mismatch")
    env = np.ones((1, 1, 1))
    for m, A in enumerate(tensors):
        if A.shape[1] != op.phys_dim:
            raise ValueError("physical dimension mismatch")
        env = _env_step(env, op.blocks[m], op.bond_dims[m],
                        op.bond_dims[m + 1], A, A)
    return float(env[0, 0, 0])

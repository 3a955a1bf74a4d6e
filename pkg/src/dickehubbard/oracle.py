"""Brute-force exact diagonalization of small clusters.

This is the independent verification route for the MPO construction, the
DMRG sweep, and every observable: the cluster Hamiltonian is assembled by
Kronecker products (or applied matrix-free as Kronecker factors above a size
threshold) and diagonalized directly.  Nothing here touches the tensor
network code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .model import ModelParams, build_local_ops, build_site_hamiltonian
from .mpo import BoundaryFields

TOTAL_DIM_CAP = 20000
MATRIX_FREE_ABOVE = 5000


@dataclass
class DenseCluster:
    """Cluster Hamiltonian for exact diagonalization.

    Stores the dense matrix for small problems; above ``MATRIX_FREE_ABOVE``
    only the per-site Kronecker factors are kept and the matrix is applied
    term by term on the reshaped state vector.
    """

    params: ModelParams
    m_sites: int
    fields: BoundaryFields
    dim: int                    # per-site dimension
    total_dim: int
    matrix: np.ndarray | None   # None when matrix-free
    _site_h: np.ndarray = None
    _a: np.ndarray = None

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix @ v
        return _apply_factors(v, self)


def _apply_site(vr: np.ndarray, op: np.ndarray, site: int) -> np.ndarray:
    out = np.tensordot(vr, op, axes=([site], [1]))
    return np.moveaxis(out, -1, site)


def _apply_factors(v: np.ndarray, h: DenseCluster) -> np.ndarray:
    m, d = h.m_sites, h.dim
    vr = v.reshape((d,) * m)
    out = np.zeros_like(vr)
    a, adag, j = h._a, h._a.T, h.params.hop_j
    for site in range(m):
        out += _apply_site(vr, h._site_h, site)
    for site in range(m - 1):
        out += -j * _apply_site(_apply_site(vr, a, site + 1), adag, site)
        out += -j * _apply_site(_apply_site(vr, adag, site + 1), a, site)
    x = a + adag
    if h.fields.psi_r != 0.0:
        out += -j * h.fields.psi_r * _apply_site(vr, x, 0)
    if h.fields.psi_l != 0.0:
        out += -j * h.fields.psi_l * _apply_site(vr, x, m - 1)
    return out.reshape(-1)


def build_dense_cluster(params: ModelParams, m_sites: int,
                        fields: BoundaryFields | None = None,
                        dim_cap: int = TOTAL_DIM_CAP) -> DenseCluster:
    """Assemble the same cluster Hamiltonian the MPO encodes."""
    if fields is None:
        fields = BoundaryFields()
    d = params.site_dim
    total = d ** m_sites
    if total > dim_cap:
        raise ValueError(f"total dimension {total} exceeds cap {dim_cap}")
    ops = build_local_ops(params)
    hd = build_site_hamiltonian(params, ops).matrix
    j = params.hop_j
    x = ops.a_dag + ops.a
    hd_first = hd - j * fields.psi_r * x
    hd_last = hd - j * fields.psi_l * x

    cluster = DenseCluster(params=params, m_sites=m_sites, fields=fields,
                           dim=d, total_dim=total, matrix=None,
                           _site_h=hd, _a=ops.a)
    if total > MATRIX_FREE_ABOVE:
        return cluster

    def embed(op, site):
        mat = np.array([[1.0]])
        for s in range(m_sites):
            mat = np.kron(mat, op if s == site else np.eye(d))
        return mat

    h = np.zeros((total, total))
    for site in range(m_sites):
        if m_sites == 1:
            h += embed(hd - j * (fields.psi_r + fields.psi_l) * x, site)
        elif site == 0:
            h += embed(hd_first, site)
        elif site == m_sites - 1:
            h += embed(hd_last, site)
        else:
            h += embed(hd, site)
    for site in range(m_sites - 1):
        h += -j * (embed(ops.a_dag, site) @ embed(ops.a, site + 1))
        h += -j * (embed(ops.a, site) @ embed(ops.a_dag, site + 1))
    cluster.matrix = h
    return cluster


def lowest_eigs(h: DenseCluster, k: int = 1):
    """The k lowest eigenpairs, deterministically."""
    if h.matrix is not None and h.total_dim <= 2500:
        vals, vecs = scipy.linalg.eigh(h.matrix, subset_by_index=[0, k - 1])
        return vals[:k], vecs[:, :k]
    linop = scipy.sparse.linalg.LinearOperator(
        (h.total_dim, h.total_dim), matvec=h.matvec, dtype=float)
    v0 = np.full(h.total_dim, 1.0)
    v0[:: max(1, h.total_dim // 13)] += 0.5    # break accidental symmetries
    vals, vecs = scipy.sparse.linalg.eigsh(
        linop, k=k, which="SA", v0=v0, maxiter=h.total_dim * 40)
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def ground_state_dense(h: DenseCluster):
    """Lowest eigenpair; the vector is normalized."""
    vals, vecs = lowest_eigs(h, k=1)
    v = vecs[:, 0]
    return float(vals[0]), v / np.linalg.norm(v)


def measure_dense(v: np.ndarray, m_sites: int, dim: int, ops_at) -> float:
    """<v| O |v> for O a product of site-local operators.

    ``ops_at`` is a list of (site, matrix) pairs; sites may repeat for
    products of operators on the same site (applied right to left).
    """
    vr = v.reshape((dim,) * m_sites)
    w = vr
    for site, op in ops_at:
        w = _apply_site(w, op, site)
    return float(np.vdot(vr, w).real)


def reduced_density_dense(v: np.ndarray, m_sites: int, dim: int, sites) -> np.ndarray:
    """Reduced density matrix of a contiguous site window."""
    sites = sorted(sites)
    vr = v.reshape((dim,) * m_sites)
    keep = sites
    rest = [s for s in range(m_sites) if s not in keep]
    perm = keep + rest
    mat = vr.transpose(perm).reshape(dim ** len(keep), dim ** len(rest))
    return mat @ mat.T.conj()


def dense_record(params: ModelParams, fields: BoundaryFields, m_sites: int,
                 energy: float, vec: np.ndarray):
    """ObservableRecord computed from an exact eigenvector.

    Mirrors :func:`dickehubbard.observables.measure_all` field by field, with
    ``energy_per_site`` using the same double-counting-corrected convention
    evaluated at the given (not necessarily self-consistent) fields.
    """
    from .model import cached_local_ops
    from .observables import (ObservableRecord, concurrence,
                              qubit_pair_density, trace_distance)

    ops = cached_local_ops(params)
    d = params.site_dim
    a_vals = [measure_dense(vec, m_sites, d, [(m, ops.a)]) for m in range(m_sites)]
    n_vals = [measure_dense(vec, m_sites, d, [(m, ops.n_exc)]) for m in range(m_sites)]
    j_vals = [measure_dense(vec, m_sites, d, [(m, ops.j_sq)]) for m in range(m_sites)]
    par = measure_dense(vec, m_sites, d, [(m, ops.parity) for m in range(m_sites)])
    c = (m_sites - 1) // 2
    rho_c = reduced_density_dense(vec, m_sites, d, [c])
    conc = concurrence(qubit_pair_density(rho_c, params))
    sx = float(np.sum(rho_c * ops.sx[0].T))
    if m_sites > 1:
        rho_pair = reduced_density_dense(vec, m_sites, d, [c, c + 1])
        rho_b = reduced_density_dense(vec, m_sites, d, [c + 1])
        tdist = trace_distance(rho_pair, rho_c, rho_b)
    else:
        tdist = 0.0
    e_site = (energy + 2.0 * params.hop_j * fields.psi_l * fields.psi_r) / m_sites
    return ObservableRecord(
        order_param_psi=float(abs(np.mean(a_vals))), n_avg=float(np.mean(n_vals)),
        j_sq=float(np.mean(j_vals)), parity=par, concurrence_c2=conc,
        trace_dist=tdist, energy_per_site=e_site, sigma_x=sx)


def cross_check_instance(params: ModelParams, fields: BoundaryFields,
                         m_sites: int = 2):
    """Solve one instance both ways; returns (energy_dev, record_devs dict).

    The DMRG runs at full bond dimension (D = site dim) so that, apart from
    solver tolerances, both routes compute the same ground state.
    """
    from .cmf import CmfSolution
    from .mps import DmrgOptions, dmrg_ground_state, product_mps
    from .mpo import build_cluster_mpo
    from .observables import measure_all
    from .tensors import SvdTruncation

    dense = build_dense_cluster(params, m_sites, fields)
    e_ref, vec = ground_state_dense(dense)
    ref = dense_record(params, fields, m_sites, e_ref, vec)

    op = build_cluster_mpo(params, m_sites, fields)
    d = params.site_dim
    opts = DmrgOptions(trunc=SvdTruncation(max_rank=d, cutoff=0.0),
                       lanczos_tol=1e-11, energy_tol=1e-12, noise=0.0)
    init = product_mps([np.full(d, 1.0)] * m_sites)
    e_mps, state, _ = dmrg_ground_state(op, init, opts)
    sol = CmfSolution(psi_l=fields.psi_l, psi_r=fields.psi_r,
                      energy_per_site=(e_mps + 2.0 * params.hop_j *
                                       fields.psi_l * fields.psi_r) / m_sites,
                      energy_cluster=e_mps, state=state, converged=True,
                      outer_iters=0, residual=0.0, hop_j=params.hop_j)
    rec = measure_all(sol, params)

    devs = {
        "energy": abs(e_mps - e_ref),
        "order_param_psi": abs(rec.order_param_psi - ref.order_param_psi),
        "n_avg": abs(rec.n_avg - ref.n_avg),
        "j_sq": abs(rec.j_sq - ref.j_sq),
        "parity": abs(rec.parity - ref.parity),
        "concurrence_c2": abs(rec.concurrence_c2 - ref.concurrence_c2),
        "trace_dist": abs(rec.trace_dist - ref.trace_dist),
        "energy_per_site": abs(rec.energy_per_site - ref.energy_per_site),
        "sigma_x": abs(rec.sigma_x - ref.sigma_x),
    }
    return devs


def random_instances(seed: int, count: int, gap_min: float = 1e-6):
    """Deterministic random M=2, N_tr=3 fixture instances.

    Parameter ranges: g1, g2 in [0, 1], lam in [-3, 3], hop_j in [0, 0.2],
    boundary fields in [-0.3, 0.3], omega = delta = 1.  Instances whose two
    lowest cluster eigenvalues are closer than ``gap_min`` are rejected so
    fixtures never sit on a ground-state degeneracy.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        params = ModelParams(
            omega=1.0, delta=1.0,
            g1=float(rng.uniform(0.0, 1.0)),
            g2=float(rng.uniform(0.0, 1.0)),
            lam=float(rng.uniform(-3.0, 3.0)),
            hop_j=float(rng.uniform(0.0, 0.2)),
            n_qubits=2, n_tr=3)
        fields = BoundaryFields(psi_l=float(rng.uniform(-0.3, 0.3)),
                                psi_r=float(rng.uniform(-0.3, 0.3)))
        h = build_dense_cluster(params, 2, fields)
        vals, _ = lowest_eigs(h, k=2)
        if vals[1] - vals[0] >= gap_min:
            out.append((params, fields))
    return out

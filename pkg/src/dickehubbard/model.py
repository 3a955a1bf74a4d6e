"""Model definition: physical parameters, site-local operators, single-cavity Hamiltonian.

A site is one cavity containing K qubits and one photon mode truncated at
``n_tr`` photons.  The site basis is ordered |qubit 1> x ... x |qubit K> x |photon>
with the photon index fastest-varying, i.e. basis index

    i = (q_1 * 2^(K-1) + ... + q_K) * (n_tr + 1) + n_photon

where q = 0 means the qubit is up (sigma_z = +1) and q = 1 means down.
Everything on the Hamiltonian path is real symmetric in this basis; only
``sy`` is complex and it is never used to build Hamiltonians.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

DEFAULT_DIM_CAP = 4096

# single-qubit operators, basis (|up>, |down>)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]])
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]])
SIGMA_P = np.array([[0.0, 1.0], [0.0, 0.0]])   # |up><down|
SIGMA_M = SIGMA_P.T.copy()


@dataclass(frozen=True)
class ModelParams:
    """All physical couplings of the lattice model.

    omega   : cavity mode frequency
    delta   : qubit transition frequency
    g1      : rotating-wave qubit-cavity coupling
    g2      : counter-rotating qubit-cavity coupling
    lam     : XY qubit-qubit coupling strength (applied once per unordered pair)
    hop_j   : inter-cavity photon hopping J
    n_qubits: qubits per cavity K
    n_tr    : photon truncation (max photon number kept per cavity)
    """

    omega: float = 1.0
    delta: float = 1.0
    g1: float = 0.0
    g2: float = 0.0
    lam: float = 0.0
    hop_j: float = 0.0
    n_qubits: int = 2
    n_tr: int = 10

    def __post_init__(self):
        if not (self.omega > 0 and self.delta > 0):
            raise ValueError("omega and delta must be positive")
        if self.n_tr < 1 or self.n_qubits < 1:
            raise ValueError("n_tr and n_qubits must be >= 1")
        for name in ("g1", "g2", "lam", "hop_j"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def site_dim(self) -> int:
        return 2 ** self.n_qubits * (self.n_tr + 1)

    def with_coupling(self, **kwargs) -> "ModelParams":
        """Return a copy with the given fields replaced."""
        return replace(self, **kwargs)


@dataclass(frozen=True)
class LocalOperatorSet:
    """Dense site-local operators embedded on the full qubit x photon space."""

    dim: int
    a: np.ndarray
    a_dag: np.ndarray
    n_phot: np.ndarray
    sp: tuple        # per-qubit raising operators
    sm: tuple
    sx: tuple
    sy: tuple        # complex; not used on the Hamiltonian path
    sz: tuple
    identity: np.ndarray

    @property
    def n_exc(self) -> np.ndarray:
        """Total site excitation a^dag a + sum_i sigma+_i sigma-_i."""
        op = self.n_phot.copy()
        for p, m in zip(self.sp, self.sm):
            op += p @ m
        return op

    @property
    def parity(self) -> np.ndarray:
        """Local parity exp(i pi n_exc): diagonal +-1 matrix."""
        nvals = np.rint(np.diag(self.n_exc)).astype(int)
        return np.diag(np.where(nvals % 2 == 0, 1.0, -1.0))

    @property
    def j_sq(self) -> np.ndarray:
        """Collective J_x^2 + J_y^2 + J_z^2 built from the embedded Paulis."""
        out = np.zeros((self.dim, self.dim))
        for comps in (self.sx, self.sy, self.sz):
            j = 0.5 * sum(comps)
            out += (j @ j).real
        return out


@dataclass(frozen=True)
class SiteHamiltonian:
    """Dense real symmetric single-cavity Hamiltonian."""

    matrix: np.ndarray
    params: ModelParams = field(compare=False, default=None)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _embed_qubit(op: np.ndarray, qubit: int, n_qubits: int, n_ph: int) -> np.ndarray:
    """Embed a 2x2 operator acting on one qubit onto the full site space."""
    mat = np.array([[1.0]], dtype=op.dtype)
    for i in range(n_qubits):
        mat = np.kron(mat, op if i == qubit else np.eye(2))
    return np.kron(mat, np.eye(n_ph))


def build_local_ops(params: ModelParams, dim_cap: int = DEFAULT_DIM_CAP) -> LocalOperatorSet:
    """Build all site-local operators for the given parameters.

    Raises ValueError if the site dimension 2^K (n_tr+1) exceeds ``dim_cap``.
    """
    dim = params.site_dim
    if dim > dim_cap:
        raise ValueError(f"site dimension {dim} exceeds cap {dim_cap}")
    n_ph = params.n_tr + 1
    k = params.n_qubits

    a_ph = np.zeros((n_ph, n_ph))
    for n in range(1, n_ph):
        a_ph[n - 1, n] = np.sqrt(n)
    eye_q = np.eye(2 ** k)
    a = np.kron(eye_q, a_ph)
    a_dag = a.T.copy()

    sp = tuple(_embed_qubit(SIGMA_P, i, k, n_ph) for i in range(k))
    sm = tuple(_embed_qubit(SIGMA_M, i, k, n_ph) for i in range(k))
    sx = tuple(_embed_qubit(SIGMA_X, i, k, n_ph) for i in range(k))
    sy = tuple(_embed_qubit(SIGMA_Y, i, k, n_ph) for i in range(k))
    sz = tuple(_embed_qubit(SIGMA_Z, i, k, n_ph) for i in range(k))

    return LocalOperatorSet(
        dim=dim, a=a, a_dag=a_dag, n_phot=a_dag @ a,
        sp=sp, sm=sm, sx=sx, sy=sy, sz=sz, identity=np.eye(dim),
    )


@functools.lru_cache(maxsize=16)
def cached_local_ops(params: ModelParams) -> LocalOperatorSet:
    """Memoized operator set; treat the returned arrays as read-only."""
    return build_local_ops(params)


def build_site_hamiltonian(params: ModelParams, ops: LocalOperatorSet | None = None) -> SiteHamiltonian:
    """Single-cavity Hamiltonian.

    H = omega a^dag a + (delta/2) sum_i sigma^z_i
        + g1 sum_i (sigma^+_i a + sigma^-_i a^dag)
        + g2 sum_i (sigma^-_i a + sigma^+_i a^dag)
        + (lam/4) sum_{i<j} (sigma^x_i sigma^x_j + sigma^y_i sigma^y_j)

    The XY term is applied once per unordered qubit pair, which places the
    zero-coupling level crossings at lam = +-2 delta for K=2.  The pair term
    is assembled from raising/lowering operators so the matrix stays real.
    """
    if ops is None:
        ops = build_local_ops(params)
    if ops.dim != params.site_dim:
        raise ValueError("operator set does not match params")

    h = params.omega * ops.n_phot.copy()
    for i in range(params.n_qubits):
        h += 0.5 * params.delta * ops.sz[i]
        h += params.g1 * (ops.sp[i] @ ops.a + ops.sm[i] @ ops.a_dag)
        h += params.g2 * (ops.sm[i] @ ops.a + ops.sp[i] @ ops.a_dag)
    # sigma^x sigma^x + sigma^y sigma^y = 2 (sigma^+ sigma^- + sigma^- sigma^+)
    for i, j in itertools.combinations(range(params.n_qubits), 2):
        h += 0.5 * params.lam * (ops.sp[i] @ ops.sm[j] + ops.sm[i] @ ops.sp[j])
    return SiteHamiltonian(matrix=h, params=params)


def ground_energy_dense(h: SiteHamiltonian | np.ndarray, dim_cap: int = DEFAULT_DIM_CAP):
    """Lowest eigenpair of a dense symmetric matrix; state normalized to 1."""
    mat = h.matrix if isinstance(h, SiteHamiltonian) else h
    if mat.shape[0] > dim_cap:
        raise ValueError(f"dimension {mat.shape[0]} exceeds dense cap {dim_cap}")
    vals, vecs = scipy.linalg.eigh(mat, subset_by_index=[0, 0])
    vec = vecs[:, 0]
    return float(vals[0]), vec / np.linalg.norm(vec)

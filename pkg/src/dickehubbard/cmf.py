"""Cluster mean-field self-consistency loop.

The infinite chain is approximated as a product of identical M-site clusters
coupled through boundary fields: psi_r (entering site 1) tracks <a_M> and
psi_l (entering site M) tracks <a_1>.  Fields are iterated with damped
mixing, optional Aitken acceleration, and a collapse shortcut that projects a
geometrically decaying trajectory onto the trivial fixed point and verifies
it.  The local-eigensolver tolerance is annealed with the outer residual so
the measured <a> is always resolved below the field tolerance.

Energy convention
-----------------
``energy_per_site`` is the variational energy of the infinite-lattice product
ansatz,

    E = ( <H_cluster(fields)> + 2 J psi_l psi_r ) / M .

The +2J psi_l psi_r term removes the double counting of the single
inter-cluster bond; at the self-consistent point this energy is stationary
with respect to the fields, so its derivative along a coupling stays
continuous through second-order transitions (a raw <H_cluster>/M convention
would pick up a spurious derivative jump from the field terms).  Branch
selection between the symmetry-broken and psi=0 solutions uses the same
convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import (ModelParams, build_site_hamiltonian, cached_local_ops,
                    ground_energy_dense)
from .mpo import BoundaryFields, build_cluster_mpo
from .mps import (MPS, DmrgOptions, dmrg_ground_state, product_mps,
                  sweep_site_expectations)

COLLAPSE_EPS = 1e-4
ZERO_BRANCH_MAX_OUTERS = 8


@dataclass(frozen=True)
class CmfOptions:
    """Controls for the outer self-consistency loop.

    mixing is the damping factor alpha in psi_new = (1-alpha) psi + alpha <a>;
    seed_field is the symmetry-breaking initial field magnitude.
    ``zero_branch`` chooses when the unseeded psi=0 branch is also solved and
    compared by energy: "auto" runs it whenever the seeded branch stays
    broken, "always"/"never" force it.
    """

    m_sites: int = 6
    field_tol: float = 1e-8
    max_outer_iters: int = 200
    mixing: float = 0.7
    seed_field: float = 0.1
    dmrg: DmrgOptions = field(default_factory=DmrgOptions)
    zero_branch: str = "auto"
    accelerate: bool = True

    def __post_init__(self):
        if not (0.0 < self.mixing <= 1.0):
            raise ValueError("mixing must be in (0, 1]")
        if self.field_tol <= 0:
            raise ValueError("field_tol must be positive")
        if self.m_sites < 1:
            raise ValueError("m_sites must be >= 1")
        if self.zero_branch not in ("auto", "always", "never"):
            raise ValueError("zero_branch must be auto, always or never")


@dataclass
class CmfSolution:
    psi_l: float
    psi_r: float
    energy_per_site: float
    energy_cluster: float          # <H_cluster(fields)> of the returned state
    state: MPS
    converged: bool
    outer_iters: int
    residual: float
    hop_j: float = 0.0
    branch: str = "seeded"
    alt_energy_per_site: float | None = None
    dmrg_converged: bool = True


def energy_per_site(sol: CmfSolution, m_sites: int) -> float:
    """Variational energy per site (double-counting corrected, see module doc)."""
    if sol.state.n_sites != m_sites:
        raise ValueError("m_sites does not match the solution's cluster size")
    return (sol.energy_cluster + 2.0 * sol.hop_j * sol.psi_l * sol.psi_r) / m_sites


def default_initial_state(params: ModelParams, m_sites: int) -> MPS:
    """Product of per-site dense ground states of the bare cavity Hamiltonian."""
    h = build_site_hamiltonian(params, cached_local_ops(params))
    _, vec = ground_energy_dense(h)
    return product_mps([vec] * m_sites)


def _edge_a_expectations(state: MPS, params: ModelParams):
    ops = cached_local_ops(params)
    vals = sweep_site_expectations(state, [ops.a])
    return float(vals[0, 0]), float(vals[0, -1])


def _corrected(e_cluster: float, params: ModelParams, fl: float, fr: float,
               m_sites: int) -> float:
    return (e_cluster + 2.0 * params.hop_j * fl * fr) / m_sites


def _aitken(h0: float, h1: float, h2: float):
    d1, d2 = h1 - h0, h2 - h1
    denom = d2 - d1
    if abs(denom) < 1e-14 * (abs(d1) + abs(d2) + 1e-300):
        return None
    x = h2 - d2 * d2 / denom
    bound = 3.0 * max(1.0, abs(h0), abs(h1), abs(h2))
    if not np.isfinite(x) or abs(x) > bound:
        return None
    return x


def solve_self_consistent(params: ModelParams, opts: CmfOptions | None = None,
                          init_state: MPS | None = None,
                          init_fields: tuple | None = None) -> CmfSolution:
    """Iterate the boundary fields of an M-site cluster to a fixed point.

    Runs the symmetry-broken branch seeded at ``opts.seed_field`` (or
    ``init_fields``); when the converged branch stays broken and
    ``opts.zero_branch`` allows, the unseeded psi=0 branch is also solved and
    the lower ``energy_per_site`` wins (near first-order boundaries the
    broken fixed point can be metastable).  ``init_state`` warm-starts the
    inner DMRG, useful when marching through nearby parameter points.
    """
    if opts is None:
        opts = CmfOptions()
    seeded = _run_branch(params, opts, init_state, init_fields, pin_zero=False)

    broken = max(abs(seeded.psi_l), abs(seeded.psi_r)) > 10.0 * opts.field_tol
    want_zero = params.hop_j != 0.0 and (
        opts.zero_branch == "always" or (opts.zero_branch == "auto" and broken))
    if want_zero:
        zero = _run_branch(params, opts, None, (0.0, 0.0), pin_zero=True)
        seeded.alt_energy_per_site = zero.energy_per_site
        if zero.converged and zero.energy_per_site < seeded.energy_per_site:
            zero.alt_energy_per_site = seeded.energy_per_site
            zero.branch = "zero"
            zero.outer_iters += seeded.outer_iters
            return zero
    return seeded


def _run_branch(params: ModelParams, opts: CmfOptions, init_state, init_fields,
                pin_zero: bool) -> CmfSolution:
    m = opts.m_sites
    if init_fields is not None:
        fl, fr = float(init_fields[0]), float(init_fields[1])
    else:
        fl = fr = float(opts.seed_field)
    if params.hop_j == 0.0 or pin_zero:
        # fields multiply J, so at J=0 any value is a fixed point; report 0
        fl = fr = 0.0

    no_hop = params.hop_j == 0.0
    state = init_state if init_state is not None else default_initial_state(params, m)
    base = opts.dmrg
    if pin_zero or no_hop:
        base = replace(base, noise=0.0)
    max_outer = min(opts.max_outer_iters, ZERO_BRANCH_MAX_OUTERS) if pin_zero \
        else opts.max_outer_iters

    history = []
    prev_mag = None
    shrinking = 0
    energy = np.inf
    residual = np.inf
    dmrg_ok = True

    tol_floor = min(base.lanczos_tol, 1e-3 * opts.field_tol)
    for outer in range(1, max_outer + 1):
        if outer == 1:
            cur = base
            if not (pin_zero or no_hop):
                # the seeded cold solve only roughs out the state
                cur = replace(base, lanczos_tol=max(base.lanczos_tol, 1e-6))
        else:
            # anneal the local solver with the outer field mismatch: loose
            # while the fields move, tight enough near the fixed point that
            # the measured <a> resolves field_tol
            tol = max(tol_floor, min(1e-5, 0.02 * residual))
            cur = replace(base, noise=0.0, rank_schedule=None,
                          verify_lanczos=False, lanczos_tol=tol)
        op = build_cluster_mpo(params, m, BoundaryFields(psi_l=fl, psi_r=fr))
        energy, state, diag = dmrg_ground_state(op, state, cur)
        dmrg_ok = diag.converged
        a1, am = _edge_a_expectations(state, params)
        residual = max(abs(a1 - fl), abs(am - fr))
        if residual < opts.field_tol or (no_hop and outer >= 1):
            converged = residual < opts.field_tol or no_hop
            return CmfSolution(
                psi_l=fl, psi_r=fr,
                energy_per_site=_corrected(energy, params, fl, fr, m),
                energy_cluster=energy, state=state, converged=converged,
                outer_iters=outer, residual=residual, hop_j=params.hop_j,
                dmrg_converged=dmrg_ok)
        if pin_zero:
            continue    # fields stay exactly zero; only the state is polished

        fl += opts.mixing * (a1 - fl)
        fr += opts.mixing * (am - fr)

        mag = max(abs(fl), abs(fr))
        if prev_mag is not None:
            shrinking = shrinking + 1 if mag < prev_mag else 0
        prev_mag = mag
        if mag < COLLAPSE_EPS and shrinking >= 2 and mag > 0.0:
            fl = fr = 0.0
            history.clear()
            continue

        history.append((fl, fr))
        if opts.accelerate and len(history) >= 3:
            (l0, r0), (l1, r1), (l2, r2) = history[-3:]
            al, ar = _aitken(l0, l1, l2), _aitken(r0, r1, r2)
            if al is not None and ar is not None:
                fl, fr = al, ar
                history.clear()

    return CmfSolution(
        psi_l=fl, psi_r=fr,
        energy_per_site=_corrected(energy, params, fl, fr, m),
        energy_cluster=energy, state=state, converged=False,
        outer_iters=max_outer, residual=residual, hop_j=params.hop_j,
        dmrg_converged=dmrg_ok)


def mean_field_m1_dense(params: ModelParams, field_tol: float = 1e-10,
                        mixing: float = 0.7, seed_field: float = 0.1,
                        max_iters: int = 500):
    """Independent single-site mean-field loop by dense diagonalization.

    Reference implementation used to check that the M=1 cluster solver
    reduces to plain mean-field theory.  Returns (psi, energy_per_site).
    """
    ops = cached_local_ops(params)
    hd = build_site_hamiltonian(params, ops).matrix
    x = ops.a_dag + ops.a
    psi = seed_field
    j = params.hop_j
    for _ in range(max_iters):
        h = hd - 2.0 * j * psi * x
        _, vec = ground_energy_dense(h)
        a_val = float(vec @ (ops.a @ vec))
        if abs(a_val - psi) < field_tol:
            e = float(vec @ (hd @ vec)) - 4.0 * j * psi * a_val + 2.0 * j * psi * psi
            return a_val, e
        psi += mixing * (a_val - psi)
    raise RuntimeError("single-site mean-field loop did not converge")

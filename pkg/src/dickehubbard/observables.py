"""Physical measurements on converged cluster states.

Everything the phase diagrams need: order parameter (cluster-averaged |<a>|),
average excitation number, average collective angular momentum, whole-cluster
excitation parity, central-site two-qubit concurrence, nearest-neighbor trace
distance, correlation curves with decay classification, and energy
derivatives across couplings.

Conventions: the cluster "center" is site (M-1)//2 (0-based); the central
pair is (center, center+1).  Parity is the expectation of the product of
local parities exp(i pi n_exc) over the whole cluster, the conserved Z2
charge.  Spin correlators use the first qubit of each cavity (the two are
equivalent by exchange symmetry).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import cmf as _cmf
from .model import ModelParams, cached_local_ops
from .mps import MPS, canonicalize, reduced_density, string_expectation, \
    sweep_site_expectations, _transfer

SIGMA_Y_PAIR = np.array([
    [0.0, 0.0, 0.0, -1.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0, 0.0],
])   # sigma_y x sigma_y in the (q1, q2) product basis; real


@dataclass
class ObservableRecord:
    """One measurement set at a parameter point."""

    order_param_psi: float
    n_avg: float
    j_sq: float
    parity: float
    concurrence_c2: float
    trace_dist: float
    energy_per_site: float
    sigma_x: float


@dataclass
class CorrelationCurve:
    kind: str                   # spin | photon | spin-connected | photon-connected
    r_values: np.ndarray
    c_values: np.ndarray
    anchor_site: int


@dataclass
class DecayFit:
    label: str                  # power | exponential | inconclusive
    r2_power: float
    r2_exp: float
    slope_power: float
    slope_exp: float
    n_points: int


def center_site(m_sites: int) -> int:
    return (m_sites - 1) // 2


def order_parameter(state: MPS, params: ModelParams) -> float:
    """psi = | (1/M) sum_m <a_m> |."""
    ops = cached_local_ops(params)
    vals = sweep_site_expectations(state, [ops.a])
    return float(abs(np.mean(vals[0])))


def excitation_number(state: MPS, params: ModelParams) -> float:
    """(1/M) sum_m <a^dag a + sum_i sigma^+ sigma^->_m."""
    ops = cached_local_ops(params)
    vals = sweep_site_expectations(state, [ops.n_exc])
    return float(np.mean(vals[0]))


def angular_momentum_sq(state: MPS, params: ModelParams) -> float:
    """(1/M) sum_m <J_x^2 + J_y^2 + J_z^2>_m; K=2 eigenvalues are 0 and 2."""
    ops = cached_local_ops(params)
    vals = sweep_site_expectations(state, [ops.j_sq])
    return float(np.mean(vals[0]))


def parity(state: MPS, params: ModelParams) -> float:
    """<prod_m exp(i pi n_exc,m)>: whole-cluster excitation parity."""
    ops = cached_local_ops(params)
    return string_expectation(state, [ops.parity] * state.n_sites)


def qubit_pair_density(rho_site: np.ndarray, params: ModelParams) -> np.ndarray:
    """Partial trace of a single-site density matrix over the photon mode."""
    if params.n_qubits != 2:
        raise ValueError("qubit-pair reduction requires exactly two qubits")
    nph = params.n_tr + 1
    r6 = rho_site.reshape(2, 2, nph, 2, 2, nph)
    rho4 = np.einsum("abncdn->abcd", r6).reshape(4, 4)
    return rho4


def concurrence(rho: np.ndarray) -> float:
    """Standard two-qubit concurrence of a 4x4 density matrix."""
    rho = np.asarray(rho)
    if rho.shape != (4, 4):
        raise ValueError("concurrence needs a 4x4 density matrix")
    if abs(np.trace(rho) - 1.0) > 1e-8:
        raise ValueError("density matrix trace differs from 1")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-8:
        raise ValueError("density matrix is not Hermitian")
    evals = np.linalg.eigvalsh((rho + rho.conj().T) / 2.0)
    if evals.min() < -1e-10:
        raise ValueError("density matrix is not positive semidefinite")
    rho_t = SIGMA_Y_PAIR @ rho.conj() @ SIGMA_Y_PAIR
    mu = np.linalg.eigvals(rho @ rho_t)
    mu = np.sqrt(np.clip(mu.real, 0.0, None))
    mu.sort()
    return float(max(0.0, mu[-1] - mu[-2] - mu[-3] - mu[-4]))


def concurrence_central(state: MPS, params: ModelParams) -> float:
    c = center_site(state.n_sites)
    rho4 = qubit_pair_density(reduced_density(state, c), params)
    return concurrence(rho4)


def trace_distance(rho_pair: np.ndarray, rho_a: np.ndarray, rho_b: np.ndarray) -> float:
    """T = (1/2) || rho_pair - rho_a x rho_b ||_1 for Hermitian inputs."""
    prod = np.kron(rho_a, rho_b)
    if prod.shape != rho_pair.shape:
        raise ValueError("dimension mismatch between pair and product")
    diff = rho_pair - prod
    evals = np.linalg.eigvalsh((diff + diff.conj().T) / 2.0)
    return float(0.5 * np.sum(np.abs(evals)))


def trace_distance_central(state: MPS, params: ModelParams) -> float:
    """Trace distance between the central pair and the product of its marginals.

    For a single-site cluster there is no pair and the distance is 0.
    """
    m = state.n_sites
    if m == 1:
        return 0.0
    c = center_site(m)
    rho_pair = reduced_density(state, (c, c + 1))
    d = state.phys_dims[c]
    r4 = rho_pair.reshape(d, d, d, d)      # (p1, p2, q1, q2)
    rho_a = np.einsum("anbn->ab", r4)
    rho_b = np.einsum("nanb->ab", r4)
    return trace_distance(rho_pair, rho_a, rho_b)


def sigma_x_central(state: MPS, params: ModelParams) -> float:
    """<sigma^x> of the first qubit at the central site."""
    ops = cached_local_ops(params)
    c = center_site(state.n_sites)
    rho = reduced_density(state, c)
    return float(np.sum(rho * ops.sx[0].T))


def measure_all(sol, params: ModelParams, full: bool = True) -> ObservableRecord:
    """All observables of a converged solution.

    With ``full`` false the entanglement-related fields (concurrence, trace
    distance, sigma_x) are skipped and reported as nan; classification only
    needs the cheap fields.
    """
    state = sol.state
    ops = cached_local_ops(params)
    vals = sweep_site_expectations(state, [ops.a, ops.n_exc, ops.j_sq])
    psi = float(abs(np.mean(vals[0])))
    n_avg = float(np.mean(vals[1]))
    j_sq = float(np.mean(vals[2]))
    par = parity(state, params)
    if full:
        c2 = concurrence_central(state, params)
        tdist = trace_distance_central(state, params)
        sx = sigma_x_central(state, params)
    else:
        c2 = tdist = sx = float("nan")
    return ObservableRecord(
        order_param_psi=psi, n_avg=n_avg, j_sq=j_sq, parity=par,
        concurrence_c2=c2, trace_dist=tdist,
        energy_per_site=sol.energy_per_site, sigma_x=sx)


def correlation_curve(state: MPS, params: ModelParams, kind: str,
                      r_max: int) -> CorrelationCurve:
    """C(R) from the cluster center for R = 1..r_max.

    kinds: "photon" <a^dag_c a_{c+R}>, "spin" <sigma^+_c sigma^-_{c+R}>, and
    the "-connected" variants subtracting <op_c><op_{c+R}>.
    """
    kinds = ("spin", "photon", "spin-connected", "photon-connected")
    if kind not in kinds:
        raise ValueError(f"kind must be one of {kinds}")
    m = state.n_sites
    c = center_site(m)
    if r_max < 1 or c + r_max >= m:
        raise ValueError("r_max must keep the correlator inside the cluster")
    ops = cached_local_ops(params)
    if kind.startswith("photon"):
        op_i, op_j = ops.a_dag, ops.a
    else:
        op_i, op_j = ops.sp[0], ops.sm[0]
    connected = kind.endswith("connected")

    psi = canonicalize(state, c)
    a = psi.tensors[c]
    tmp = np.tensordot(op_i, a, axes=(1, 1)).transpose(1, 0, 2)
    env = np.tensordot(a, tmp, axes=([0, 1], [0, 1]))
    r_values = np.arange(1, r_max + 1)
    c_values = np.empty(r_max)
    for r in r_values:
        site = c + r
        b = psi.tensors[site]
        closed = _transfer(env, b, b, op_j)
        c_values[r - 1] = float(np.trace(closed))
        if r < r_max:
            env = _transfer(env, b, b)
    if connected:
        means = sweep_site_expectations(state, [op_i, op_j])
        c_values -= means[0, c] * means[1, c + 1:c + r_max + 1]
    return CorrelationCurve(kind=kind, r_values=r_values, c_values=c_values,
                            anchor_site=c)


def _linfit_r2(x: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 0.0:
        return slope, 0.0
    return slope, 1.0 - float(np.sum(resid**2)) / ss_tot


def classify_decay(curve: CorrelationCurve, r2_margin: float = 0.02,
                   floor: float = 1e-13, min_points: int = 4) -> DecayFit:
    """Label the decay of |C(R)| as power-law or exponential.

    Fits log|C| against log R and against R over R >= 2, dropping values
    below ``floor`` (solver noise); the better fit by at least ``r2_margin``
    in R^2 wins, otherwise the fit is inconclusive.
    """
    mask = (curve.r_values >= 2) & (np.abs(curve.c_values) > floor)
    r = curve.r_values[mask].astype(float)
    c = np.abs(curve.c_values[mask])
    if len(r) < min_points:
        return DecayFit("inconclusive", 0.0, 0.0, 0.0, 0.0, len(r))
    logc = np.log(c)
    slope_p, r2_p = _linfit_r2(np.log(r), logc)
    slope_e, r2_e = _linfit_r2(r, logc)
    if r2_p >= r2_e + r2_margin:
        label = "power"
    elif r2_e >= r2_p + r2_margin:
        label = "exponential"
    else:
        label = "inconclusive"
    return DecayFit(label, r2_p, r2_e, slope_p, slope_e, len(r))


def _set_coupling(params: ModelParams, axis: str, value: float) -> ModelParams:
    if axis == "g":
        return replace(params, g1=value, g2=value)
    name = {"g1": "g1", "g2": "g2", "lambda": "lam", "lam": "lam",
            "hop_j": "hop_j"}.get(axis)
    if name is None:
        raise ValueError(f"unknown coupling axis {axis!r}")
    return replace(params, **{name: value})


def energy_derivative(params: ModelParams, opts, g_center: float, dg: float,
                      axis: str = "g1", side: str = "central") -> float:
    """Finite-difference derivative of the converged energy per site.

    side: "central" (E(g+dg)-E(g-dg))/(2 dg), "left" backward difference at
    g_center, "right" forward difference.
    """
    if dg <= 0:
        raise ValueError("dg must be positive")

    def energy(g):
        sol = _cmf.solve_self_consistent(_set_coupling(params, axis, g), opts)
        return sol.energy_per_site

    if side == "central":
        return (energy(g_center + dg) - energy(g_center - dg)) / (2.0 * dg)
    if side == "left":
        return (energy(g_center) - energy(g_center - dg)) / dg
    if side == "right":
        return (energy(g_center + dg) - energy(g_center)) / dg
    raise ValueError("side must be central, left or right")

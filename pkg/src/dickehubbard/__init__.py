"""Ground-state solver and phase-diagram scanner for the 1D Dicke-Hubbard
lattice with two XY-coupled qubits per cavity: cluster mean-field boundary
fields around a two-site DMRG cluster solver, an exact-diagonalization
oracle, and a full observable suite."""

__version__ = "0.1.0"

from .model import (LocalOperatorSet, ModelParams, SiteHamiltonian,
                    build_local_ops, build_site_hamiltonian,
                    ground_energy_dense)
from .tensors import SvdTruncation, contract, lanczos_lowest, svd_split
from .mpo import MPO, BoundaryFields, build_cluster_mpo, mpo_expectation
from .mps import (MPS, DmrgOptions, canonicalize, dmrg_ground_state, load_mps,
                  overlap, product_mps, reduced_density, save_mps,
                  site_expectation, two_point)
from .cmf import CmfOptions, CmfSolution, energy_per_site, solve_self_consistent
from .observables import (CorrelationCurve, ObservableRecord, classify_decay,
                          concurrence, correlation_curve, energy_derivative,
                          measure_all, order_parameter, parity,
                          trace_distance)
from .scan import (GridAxis, PhaseLabel, ScanConfig, classify, export,
                   refine_boundary, run_scan)

__all__ = [
    "LocalOperatorSet", "ModelParams", "SiteHamiltonian", "build_local_ops",
    "build_site_hamiltonian", "ground_energy_dense",
    "SvdTruncation", "contract", "lanczos_lowest", "svd_split",
    "MPO", "BoundaryFields", "build_cluster_mpo", "mpo_expectation",
    "MPS", "DmrgOptions", "canonicalize", "dmrg_ground_state", "load_mps",
    "overlap", "product_mps", "reduced_density", "save_mps",
    "site_expectation", "two_point",
    "CmfOptions", "CmfSolution", "energy_per_site", "solve_self_consistent",
    "CorrelationCurve", "ObservableRecord", "classify_decay", "concurrence",
    "correlation_curve", "energy_derivative", "measure_all",
    "order_parameter", "parity", "trace_distance",
    "GridAxis", "PhaseLabel", "ScanConfig", "classify", "export",
    "refine_boundary", "run_scan",
]

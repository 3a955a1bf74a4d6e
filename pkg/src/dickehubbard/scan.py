"""Parameter-grid scans, phase classification, boundary refinement, export.

A scan walks a 1- or 2-axis parameter grid in row-major order (axis1 outer),
solves the cluster mean-field problem at every point, measures all
observables, classifies the phase, and writes plot-ready CSV/JSON-lines plus
a manifest.  Grid points are independent and seeded, so results are
deterministic for a given config regardless of worker count, and scans are
resumable: rows already present in the output CSV are reused verbatim.

Axis names: any of g1, g2, lambda, hop_j, and "g" which ties g1 = g2.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import multiprocessing
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .cmf import CmfOptions, CmfSolution, solve_self_consistent
from .model import ModelParams
from .mps import DmrgOptions
from .observables import ObservableRecord, measure_all, _set_coupling
from .tensors import SvdTruncation

CSV_COLUMNS = [
    "g1", "g2", "lambda", "hop_j", "m_sites", "d_bond", "n_tr",
    "energy_per_site", "psi", "n_avg", "j_sq", "parity", "concurrence",
    "trace_dist", "phase", "n_sector", "j_sector", "parity_sector",
    "status", "outer_iters",
]

AXIS_NAMES = ("g", "g1", "g2", "lambda", "hop_j")


@dataclass(frozen=True)
class GridAxis:
    name: str
    start: float
    stop: float
    points: int

    def __post_init__(self):
        if self.name not in AXIS_NAMES:
            raise ValueError(f"axis name must be one of {AXIS_NAMES}")
        if self.points < 2:
            raise ValueError("grid needs at least 2 points per axis")

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.points)


@dataclass(frozen=True)
class ScanConfig:
    axes: tuple                      # 1 or 2 GridAxis entries
    base: ModelParams = field(default_factory=ModelParams)
    cmf: CmfOptions = field(default_factory=CmfOptions)
    out_dir: str = "scan_out"
    formats: tuple = ("csv", "jsonl")
    psi_eps: float = 1e-4
    integer_eps: float = 1e-3
    parallel_workers: int = 1
    resume: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (1 <= len(self.axes) <= 2):
            raise ValueError("scans support one or two grid axes")
        if self.psi_eps <= 0 or self.integer_eps <= 0:
            raise ValueError("classification thresholds must be positive")
        for fmt in self.formats:
            if fmt not in ("csv", "jsonl"):
                raise ValueError(f"unknown format {fmt!r}")

    def grid_values(self):
        return [ax.values() for ax in self.axes]

    def grid_shape(self):
        return tuple(ax.points for ax in self.axes)

    def n_points(self) -> int:
        return int(np.prod(self.grid_shape()))

    def point_params(self, index: int) -> ModelParams:
        values = self.grid_values()
        params = self.base
        if len(self.axes) == 1:
            params = _set_coupling(params, self.axes[0].name, float(values[0][index]))
        else:
            n2 = self.axes[1].points
            i, j = divmod(index, n2)
            params = _set_coupling(params, self.axes[0].name, float(values[0][i]))
            params = _set_coupling(params, self.axes[1].name, float(values[1][j]))
        return params

    def to_kv(self) -> dict:
        """Canonical flat key=value view (used for hashing and config files)."""
        kv = {}
        for i, ax in enumerate(self.axes, start=1):
            kv[f"axis{i}"] = f"{ax.name}:{ax.start:.12g}:{ax.stop:.12g}:{ax.points}"
        b = self.base
        kv.update(omega=f"{b.omega:.12g}", delta=f"{b.delta:.12g}",
                  g1=f"{b.g1:.12g}", g2=f"{b.g2:.12g}",
                  **{"lambda": f"{b.lam:.12g}"}, hop_j=f"{b.hop_j:.12g}",
                  n_qubits=str(b.n_qubits), n_tr=str(b.n_tr))
        c = self.cmf
        kv.update(m_sites=str(c.m_sites), field_tol=f"{c.field_tol:.12g}",
                  max_outer_iters=str(c.max_outer_iters),
                  mixing=f"{c.mixing:.12g}", seed_field=f"{c.seed_field:.12g}",
                  zero_branch=c.zero_branch, accelerate=str(c.accelerate).lower())
        d = c.dmrg
        kv.update(d_bond=str(d.trunc.max_rank), cutoff=f"{d.trunc.cutoff:.12g}",
                  max_sweeps=str(d.max_sweeps), energy_tol=f"{d.energy_tol:.12g}",
                  lanczos_tol=f"{d.lanczos_tol:.12g}",
                  lanczos_max_iter=str(d.lanczos_max_iter),
                  noise=f"{d.noise:.12g}", noise_sweeps=str(d.noise_sweeps),
                  dmrg_seed=str(d.seed))
        kv.update(out_dir=self.out_dir, formats=",".join(self.formats),
                  psi_eps=f"{self.psi_eps:.12g}",
                  integer_eps=f"{self.integer_eps:.12g}",
                  workers=str(self.parallel_workers),
                  resume=str(self.resume).lower(), seed=str(self.seed))
        return kv


def config_hash(config: ScanConfig) -> str:
    text = "\n".join(f"{k} = {v}" for k, v in sorted(config.to_kv().items()))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# config file parsing

_MODEL_KEYS = {"omega": float, "delta": float, "g1": float, "g2": float,
               "lambda": float, "hop_j": float, "n_qubits": int, "n_tr": int}
_CMF_KEYS = {"m_sites": int, "field_tol": float, "max_outer_iters": int,
             "mixing": float, "seed_field": float, "zero_branch": str,
             "accelerate": bool}
_DMRG_KEYS = {"d_bond": int, "cutoff": float, "max_sweeps": int,
              "energy_tol": float, "lanczos_tol": float,
              "lanczos_max_iter": int, "noise": float, "noise_sweeps": int,
              "dmrg_seed": int}
_SCAN_KEYS = {"out_dir": str, "formats": str, "psi_eps": float,
              "integer_eps": float, "workers": int, "resume": bool,
              "seed": int}


class ConfigError(ValueError):
    pass


def _coerce(caster, raw: str):
    if caster is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    return caster(raw.strip())


def parse_kv_text(text: str) -> dict:
    """Parse the flat ``key = value`` config format ('#' starts a comment)."""
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value'")
        key, raw = line.split("=", 1)
        out[key.strip()] = raw.strip()
    return out


def config_from_kv(kv: dict) -> ScanConfig:
    kv = dict(kv)
    axes = []
    for i in (1, 2):
        spec = kv.pop(f"axis{i}", None)
        if spec is None:
            continue
        parts = spec.split(":")
        if len(parts) != 4:
            raise ConfigError(f"axis{i} must be name:start:stop:points")
        axes.append(GridAxis(parts[0].strip(), float(parts[1]),
                             float(parts[2]), int(parts[3])))
    if not axes:
        raise ConfigError("at least axis1 is required for a scan")

    model_kw, cmf_kw, dmrg_kw, scan_kw = {}, {}, {}, {}
    for key, raw in kv.items():
        if key in _MODEL_KEYS:
            name = "lam" if key == "lambda" else key
            model_kw[name] = _coerce(_MODEL_KEYS[key], raw)
        elif key in _CMF_KEYS:
            cmf_kw[key] = _coerce(_CMF_KEYS[key], raw)
        elif key in _DMRG_KEYS:
            dmrg_kw[key] = _coerce(_DMRG_KEYS[key], raw)
        elif key in _SCAN_KEYS:
            scan_kw[key] = _coerce(_SCAN_KEYS[key], raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")

    try:
        base = ModelParams(**model_kw)
        trunc = SvdTruncation(max_rank=dmrg_kw.pop("d_bond", 8),
                              cutoff=dmrg_kw.pop("cutoff", 1e-10))
        seed = dmrg_kw.pop("dmrg_seed", 1234)
        dmrg = DmrgOptions(trunc=trunc, seed=seed, **dmrg_kw)
        cmf = CmfOptions(dmrg=dmrg, **cmf_kw)
        formats = tuple(f.strip() for f in scan_kw.pop("formats", "csv,jsonl").split(","))
        config = ScanConfig(
            axes=tuple(axes), base=base, cmf=cmf, formats=formats,
            out_dir=scan_kw.pop("out_dir", "scan_out"),
            psi_eps=scan_kw.pop("psi_eps", 1e-4),
            integer_eps=scan_kw.pop("integer_eps", 1e-3),
            parallel_workers=scan_kw.pop("workers", 1),
            resume=scan_kw.pop("resume", False),
            seed=scan_kw.pop("seed", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config


def load_config(path, overrides=None) -> ScanConfig:
    with open(path) as fh:
        kv = parse_kv_text(fh.read())
    if overrides:
        kv.update(overrides)
    return config_from_kv(kv)


# ---------------------------------------------------------------------------
# classification

@dataclass(frozen=True)
class PhaseLabel:
    """Thresholded phase assignment of one observable record."""

    kind: str                       # mott | superfluid | incoherent | coherent
    n_sector: int | None            # rounded <N> (g2 = 0 only)
    j_sector: int                   # 0 or 1 from <J^2> in {0, 2}
    parity_sector: int | None       # +-1 (g2 != 0, incoherent only)

    def key(self):
        return (self.kind, self.n_sector, self.j_sector, self.parity_sector)


def classify(record: ObservableRecord, params: ModelParams,
             psi_eps: float = 1e-4, integer_eps: float = 1e-3) -> PhaseLabel:
    """Deterministic thresholded phase label for one grid point."""
    rwa = params.g2 == 0.0
    if record.order_param_psi > psi_eps:
        kind = "superfluid" if rwa else "coherent"
    else:
        kind = "mott" if rwa else "incoherent"
    n_sector = int(round(record.n_avg)) if rwa else None
    j_sector = 0 if record.j_sq < 1.0 else 1
    parity_sector = None
    if not rwa and kind == "incoherent":
        parity_sector = 1 if record.parity >= 0.0 else -1
    return PhaseLabel(kind=kind, n_sector=n_sector, j_sector=j_sector,
                      parity_sector=parity_sector)


# ---------------------------------------------------------------------------
# row computation and formatting

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if np.isnan(v):
        return "nan"
    return f"{v:.12g}"


def solve_point(params: ModelParams, cmf_opts: CmfOptions,
                psi_eps: float = 1e-4, integer_eps: float = 1e-3,
                full: bool = True):
    """Solve one parameter point: returns (record, label, solution)."""
    sol = solve_self_consistent(params, cmf_opts)
    record = measure_all(sol, params, full=full)
    label = classify(record, params, psi_eps, integer_eps)
    return record, label, sol


def compute_row(config: ScanConfig, index: int) -> dict:
    """One scan row (typed values); failures are recorded, not raised."""
    params = config.point_params(index)
    cmf_opts = replace(config.cmf,
                       dmrg=replace(config.cmf.dmrg,
                                    seed=config.cmf.dmrg.seed + config.seed))
    row = {
        "g1": params.g1, "g2": params.g2, "lambda": params.lam,
        "hop_j": params.hop_j, "m_sites": config.cmf.m_sites,
        "d_bond": config.cmf.dmrg.trunc.max_rank, "n_tr": params.n_tr,
        "energy_per_site": None, "psi": None, "n_avg": None, "j_sq": None,
        "parity": None, "concurrence": None, "trace_dist": None,
        "phase": "", "n_sector": None, "j_sector": None,
        "parity_sector": None, "status": "ok", "outer_iters": None,
    }
    try:
        record, label, sol = solve_point(params, cmf_opts,
                                         config.psi_eps, config.integer_eps)
        row.update(
            energy_per_site=record.energy_per_site, psi=record.order_param_psi,
            n_avg=record.n_avg, j_sq=record.j_sq, parity=record.parity,
            concurrence=record.concurrence_c2, trace_dist=record.trace_dist,
            phase=label.kind, n_sector=label.n_sector,
            j_sector=label.j_sector, parity_sector=label.parity_sector,
            outer_iters=sol.outer_iters)
        if not sol.converged:
            row["status"] = "nonconverged"
    except Exception as exc:   # per-point failures must not kill the scan
        row["status"] = f"failed({type(exc).__name__})"
    return row


def format_csv_row(row: dict) -> str:
    return ",".join(_fmt(row[col]) for col in CSV_COLUMNS)


def parse_csv_row(line: str) -> dict:
    parts = line.rstrip("\n").split(",")
    if len(parts) != len(CSV_COLUMNS):
        raise ValueError("malformed scan CSV row")
    row = {}
    for col, raw in zip(CSV_COLUMNS, parts):
        if raw == "":
            row[col] = None
        elif col in ("phase", "status"):
            row[col] = raw
        elif col in ("m_sites", "d_bond", "n_tr", "n_sector", "j_sector",
                     "parity_sector", "outer_iters"):
            row[col] = int(raw)
        else:
            row[col] = float(raw)
    return row


@dataclass
class ScanResult:
    rows: list                      # typed rows, grid order
    csv_lines: list                 # formatted data lines, grid order
    n_resumed: int
    n_failed: int

    @property
    def n_points(self) -> int:
        return len(self.rows)


def _worker_init():
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")


def _worker(args):
    config, index = args
    return index, compute_row(config, index)


def run_scan(config: ScanConfig) -> ScanResult:
    """Execute the grid scan; resumable and deterministic given the config."""
    total = config.n_points()
    lines: list = [None] * total
    rows: list = [None] * total
    n_resumed = 0

    csv_path = os.path.join(config.out_dir, "scan.csv")
    if config.resume and os.path.exists(csv_path):
        with open(csv_path) as fh:
            existing = fh.read().splitlines()
        if existing and existing[0] == ",".join(CSV_COLUMNS):
            for k, line in enumerate(existing[1:total + 1]):
                lines[k] = line
                rows[k] = parse_csv_row(line)
                n_resumed += 1

    pending = [i for i in range(total) if lines[i] is None]
    workers = max(1, config.parallel_workers)
    if workers > 1 and len(pending) > 1:
        pool = concurrent.futures.ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init,
            mp_context=multiprocessing.get_context("spawn"))
        with pool:
            for index, row in pool.map(_worker, [(config, i) for i in pending],
                                       chunksize=1):
                rows[index] = row
                lines[index] = format_csv_row(row)
    else:
        for i in pending:
            rows[i] = compute_row(config, i)
            lines[i] = format_csv_row(rows[i])

    n_failed = sum(1 for r in rows if r["status"] != "ok")
    return ScanResult(rows=rows, csv_lines=lines, n_resumed=n_resumed,
                      n_failed=n_failed)


def export(result: ScanResult, config: ScanConfig) -> dict:
    """Write CSV / JSON-lines / manifest into the config's output directory."""
    os.makedirs(config.out_dir, exist_ok=True)
    paths = {}
    if "csv" in config.formats:
        path = os.path.join(config.out_dir, "scan.csv")
        with open(path, "w") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for line in result.csv_lines:
                fh.write(line + "\n")
        paths["csv"] = path
    if "jsonl" in config.formats:
        path = os.path.join(config.out_dir, "scan.jsonl")
        with open(path, "w") as fh:
            for row in result.rows:
                fh.write(json.dumps(row, sort_keys=True,
                                    allow_nan=True) + "\n")
        paths["jsonl"] = path
    manifest = {
        "config_hash": config_hash(config),
        "code_version": __version__,
        "columns": CSV_COLUMNS,
        "n_points": result.n_points,
        "statuses": [r["status"] for r in result.rows],
        "n_failed": result.n_failed,
    }
    path = os.path.join(config.out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    paths["manifest"] = path
    return paths


# ---------------------------------------------------------------------------
# boundary refinement

@dataclass
class BoundaryEstimate:
    axis: str
    critical: float
    lower_label: PhaseLabel
    upper_label: PhaseLabel
    j_low: float
    j_high: float
    j_jump: bool
    order_hint: str                 # "first" | "second"
    n_solves: int


def refine_boundary(config: ScanConfig, axis: str, bracket,
                    tol: float = 1e-3) -> BoundaryEstimate:
    """Bisect a phase-label flip along one axis to ``tol`` in the parameter.

    Reports the flip location and whether <J^2> changes across it, the
    first- vs second-order heuristic.  Warm-starts each solve from the
    nearest previously solved point on the same side.
    """
    if axis not in AXIS_NAMES:
        raise ValueError(f"axis must be one of {AXIS_NAMES}")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")
    n_solves = 0

    def probe(value, warm_sol):
        nonlocal n_solves
        params = _set_coupling(config.base, axis, value)
        init_state = init_fields = None
        if warm_sol is not None:
            init_state = warm_sol.state
            mag = max(abs(warm_sol.psi_l), abs(warm_sol.psi_r))
            if mag > 0.5 * config.cmf.seed_field:
                init_fields = (warm_sol.psi_l, warm_sol.psi_r)
        sol = solve_self_consistent(params, config.cmf,
                                    init_state=init_state,
                                    init_fields=init_fields)
        n_solves += 1
        record = measure_all(sol, params, full=False)
        label = classify(record, params, config.psi_eps, config.integer_eps)
        return label, record, sol

    lo_label, lo_rec, lo_sol = probe(lo, None)
    hi_label, hi_rec, hi_sol = probe(hi, None)
    if lo_label.key() == hi_label.key():
        raise ValueError("bracket endpoints classify identically; widen it")

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        mid_label, mid_rec, mid_sol = probe(mid, lo_sol)
        if mid_label.key() == lo_label.key():
            lo, lo_rec, lo_sol = mid, mid_rec, mid_sol
        else:
            hi, hi_label, hi_rec, hi_sol = mid, mid_label, mid_rec, mid_sol

    j_low, j_high = lo_rec.j_sq, hi_rec.j_sq
    j_jump = abs(j_high - j_low) > 1.0
    return BoundaryEstimate(
        axis=axis, critical=0.5 * (lo + hi), lower_label=lo_label,
        upper_label=hi_label, j_low=j_low, j_high=j_high, j_jump=j_jump,
        order_hint="first" if j_jump else "second", n_solves=n_solves)


# ---------------------------------------------------------------------------
# triple-point detection on a 2-axis scan

def label_grid(result: ScanResult, config: ScanConfig):
    """Phase-label keys on the (axis1, axis2) grid; None where failed."""
    if len(config.axes) != 2:
        raise ValueError("label_grid needs a 2-axis scan")
    n1, n2 = config.grid_shape()
    grid = np.empty((n1, n2), dtype=object)
    for index, row in enumerate(result.rows):
        i, j = divmod(index, n2)
        if row["status"].startswith("failed"):
            grid[i, j] = None
        else:
            grid[i, j] = (row["phase"], row["n_sector"], row["j_sector"],
                          row["parity_sector"])
    return grid


def triple_plaquettes(result: ScanResult, config: ScanConfig):
    """Grid cells whose 2x2 corners carry >= 3 distinct phase labels."""
    grid = label_grid(result, config)
    n1, n2 = grid.shape
    cells = []
    for i in range(n1 - 1):
        for j in range(n2 - 1):
            corners = {grid[i, j], grid[i + 1, j], grid[i, j + 1],
                       grid[i + 1, j + 1]}
            corners.discard(None)
            if len(corners) >= 3:
                cells.append((i, j))
    return cells


def triple_point_estimates(result: ScanResult, config: ScanConfig):
    """Centroids (axis1_value, axis2_value) of connected triple-cell clusters."""
    cells = set(triple_plaquettes(result, config))
    v1, v2 = config.grid_values()
    clusters = []
    while cells:
        stack = [cells.pop()]
        comp = []
        while stack:
            c = stack.pop()
            comp.append(c)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    nb = (c[0] + di, c[1] + dj)
                    if nb in cells:
                        cells.remove(nb)
                        stack.append(nb)
        clusters.append(comp)
    out = []
    for comp in clusters:
        a1 = float(np.mean([0.5 * (v1[i] + v1[i + 1]) for i, _ in comp]))
        a2 = float(np.mean([0.5 * (v2[j] + v2[j + 1]) for _, j in comp]))
        out.append((a1, a2))
    return out

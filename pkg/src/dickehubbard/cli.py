"""Command-line driver: grid scans, boundary refinement, single points, oracle checks.

Exit codes: 0 success, 1 configuration error, 2 partial failures present.
"""

from __future__ import annotations

import argparse
import sys

from . import oracle, scan
from .scan import ConfigError, ScanConfig, config_from_kv, parse_kv_text


def _collect_kv(path, sets):
    kv = {}
    if path:
        with open(path) as fh:
            kv = parse_kv_text(fh.read())
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        kv[key.strip()] = val.strip()
    return kv


def _point_config(args) -> ScanConfig:
    kv = _collect_kv(args.config, args.set)
    # a dummy axis lets single points reuse the scan config plumbing
    kv.setdefault("axis1", "g1:0:1:2")
    return config_from_kv(kv)


def cmd_scan(args) -> int:
    config = config_from_kv(_collect_kv(args.config, args.set))
    result = scan.run_scan(config)
    paths = scan.export(result, config)
    print(f"scan: {result.n_points} points "
          f"({result.n_resumed} resumed, {result.n_failed} not ok)")
    for kind, path in sorted(paths.items()):
        print(f"  {kind}: {path}")
    return 2 if result.n_failed else 0


def cmd_point(args) -> int:
    config = _point_config(args)
    params = config.base
    record, label, sol = scan.solve_point(params, config.cmf,
                                          config.psi_eps, config.integer_eps)
    print(f"params: g1={params.g1:g} g2={params.g2:g} lambda={params.lam:g} "
          f"J={params.hop_j:g} M={config.cmf.m_sites} "
          f"D={config.cmf.dmrg.trunc.max_rank} n_tr={params.n_tr}")
    print(f"converged: {sol.converged} (outer iters {sol.outer_iters}, "
          f"residual {sol.residual:.3e}, branch {sol.branch})")
    print(f"energy_per_site: {record.energy_per_site:.12g}")
    print(f"psi:             {record.order_param_psi:.12g}")
    print(f"n_avg:           {record.n_avg:.12g}")
    print(f"j_sq:            {record.j_sq:.12g}")
    print(f"parity:          {record.parity:.12g}")
    print(f"concurrence:     {record.concurrence_c2:.12g}")
    print(f"trace_dist:      {record.trace_dist:.12g}")
    print(f"sigma_x:         {record.sigma_x:.12g}")
    sectors = [f"n={label.n_sector}" if label.n_sector is not None else None,
               f"j={label.j_sector}",
               f"parity={label.parity_sector:+d}" if label.parity_sector
               is not None else None]
    print(f"phase: {label.kind} ({', '.join(s for s in sectors if s)})")
    return 0 if sol.converged else 2


def cmd_refine(args) -> int:
    config = _point_config(args)
    est = scan.refine_boundary(config, args.axis, (args.lo, args.hi),
                               tol=args.tol)
    print(f"critical {args.axis} = {est.critical:.6g} (tol {args.tol:g}, "
          f"{est.n_solves} solves)")
    print(f"below: {est.lower_label.kind} (J^2 = {est.j_low:.6g})")
    print(f"above: {est.upper_label.kind} (J^2 = {est.j_high:.6g})")
    print(f"J^2 jump: {est.j_jump} -> {est.order_hint}-order heuristic")
    return 0


def cmd_verify(args) -> int:
    """Cross-check DMRG + observables against exact diagonalization."""
    instances = oracle.random_instances(args.seed, args.count)
    worst = {}
    for params, fields in instances:
        devs = oracle.cross_check_instance(params, fields)
        for key, val in devs.items():
            worst[key] = max(worst.get(key, 0.0), val)
    print(f"verify: {args.count} random M=2 instances (seed {args.seed})")
    for key in sorted(worst):
        print(f"  max |{key}| deviation = {worst[key]:.3e}")
    ok = worst["energy"] < 1e-8 and all(
        v < 1e-7 for k, v in worst.items() if k != "energy")
    print("  status:", "ok" if ok else "FAILED")
    return 0 if ok else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dickehubbard",
        description="Cluster mean-field + MPS solver for the 1D Dicke-Hubbard "
                    "lattice with XY-coupled qubit pairs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_scan = sub.add_parser("scan", help="run a parameter-grid scan")
    p_scan.add_argument("--config", help="key = value config file")
    p_scan.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    p_scan.set_defaults(func=cmd_scan)

    p_point = sub.add_parser("point", help="solve a single parameter point")
    p_point.add_argument("--config")
    p_point.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_point.set_defaults(func=cmd_point)

    p_ref = sub.add_parser("refine", help="bisect a phase boundary on one axis")
    p_ref.add_argument("--config")
    p_ref.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_ref.add_argument("--axis", required=True,
                       choices=list(scan.AXIS_NAMES))
    p_ref.add_argument("--lo", type=float, required=True)
    p_ref.add_argument("--hi", type=float, required=True)
    p_ref.add_argument("--tol", type=float, default=1e-3)
    p_ref.set_defaults(func=cmd_refine)

    p_ver = sub.add_parser("verify", help="oracle cross-checks on random instances")
    p_ver.add_argument("--count", type=int, default=20)
    p_ver.add_argument("--seed", type=int, default=20240401)
    p_ver.set_defaults(func=cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

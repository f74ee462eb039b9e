"""Command line front end.

Subcommands cover the full workflow on the rotating benchmark: solve the
monolithic reference and store state snapshots, collect adjoint snapshots,
inspect POD spectra, run coupled solves with any state/adjoint model
combination, produce the standard report tables, and verify the adjoint
gradient against finite differences.

Every numeric flag can instead come from a JSON config file given with
--config; explicit flags override the file. Exit codes: 0 success, 1 a run
or check failed (with --strict for non-converged coupled solves), 2 bad
arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from obcoupling import bench, coupling, rom, snapshots


def _add_scenario_args(sub):
    sub.add_argument("--level", type=int, default=32,
                     help="grid refinement level (cells per side)")
    sub.add_argument("--nu", type=float, default=1e-5, help="diffusion")
    sub.add_argument("--dt", type=float, default=None,
                     help="timestep (default: level-scaled benchmark value)")
    sub.add_argument("--T", type=float, default=None,
                     help="final time (default: one revolution)")
    supg = sub.add_mutually_exclusive_group()
    supg.add_argument("--supg", dest="supg", action="store_true", default=True,
                      help="streamline upwind stabilization (default on)")
    supg.add_argument("--no-supg", dest="supg", action="store_false")


def _add_descent_args(sub):
    sub.add_argument("--delta", type=float, default=1e-16,
                     help="control regularization weight")
    sub.add_argument("--tol", type=float, default=1e-14,
                     help="objective stopping tolerance")
    sub.add_argument("--alpha", type=float, default=2.0,
                     help="initial gradient step")
    sub.add_argument("--max-iters", type=int, default=10000,
                     help="per-timestep iteration cap")
    sub.add_argument("--no-warm-start", dest="warm_start", action="store_false",
                     default=True, help="start each timestep from a zero control")


def _benchmark_spec(args) -> bench.BenchmarkSpec:
    kwargs = dict(level=args.level, nu=args.nu, dt=args.dt, supg_on=args.supg)
    if args.T is not None:
        kwargs["T"] = args.T
    for name, key in (("delta", "delta"), ("tol", "tol"), ("alpha", "alpha0"),
                      ("max_iters", "max_iters"), ("warm_start", "warm_start"),
                      ("gdra_delta", "gdra_delta"), ("gdra_tol", "gdra_tol"),
                      ("workers", "mgd_workers")):
        if hasattr(args, name):
            kwargs[key] = getattr(args, name)
    return bench.BenchmarkSpec(**kwargs)


def _fail(message: str, code: int = 2) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _parse_state_model(text: str):
    if text == "fom":
        return None
    if text.startswith("rom:"):
        modes = int(text.split(":", 1)[1])
        if modes < 1:
            raise ValueError("state mode count must be positive")
        return modes
    raise ValueError(f"bad state model {text!r}, expected fom or rom:<modes>")


def _parse_adjoint_model(text: str):
    if text == "full":
        return None, None
    source, _, modes_txt = text.rpartition(":")
    if not source:
        raise ValueError(f"bad adjoint model {text!r}, expected full or <source>:<modes>")
    modes = int(modes_txt)
    if modes < 1:
        raise ValueError("adjoint mode count must be positive")
    if source != "state" and source != "gdra" and not (
            source.startswith("mgd") and source[3:].isdigit()):
        raise ValueError(f"unknown adjoint source {source!r}")
    return source, modes


def cmd_monolithic(args) -> int:
    spec = _benchmark_spec(args)
    problem = spec.problem()
    traj = bench.monolithic_solve(problem, supg_on=spec.supg_on)
    store = snapshots.split_monolithic_snapshots(traj, problem.decomposition)
    store.meta.update({"level": spec.level, "nu": spec.nu, "dt": problem.dt,
                       "n_steps": problem.n_steps, "supg_on": spec.supg_on})
    snapshots.write_store(store, args.out)
    final = traj.data[:, -1]
    print(f"monolithic: {problem.n_steps} steps, "
          f"{traj.data.shape[0]} free DOFs, |u(T)|_2 = {np.linalg.norm(final):.6e}")
    print(f"state snapshots written to {args.out}")
    return 0


def cmd_collect_adjoint(args) -> int:
    spec = _benchmark_spec(args)
    problem = spec.problem()
    config = spec.config()
    if args.method == "gdra":
        config = replace(config, delta=spec.gdra_delta, tol=spec.gdra_tol)
        store = snapshots.collect_gdra(problem, config)
    else:
        if args.state_store is None:
            return _fail("--method mgd requires --state-store")
        states = snapshots.read_store(args.state_store)
        store = snapshots.collect_mgd(problem, states, args.m, config,
                                      workers=spec.mgd_workers)
    snapshots.write_store(store, args.out)
    print(f"{args.method}: {store.meta['n_pairs']} adjoint pairs written to {args.out}")
    return 0


def cmd_pod(args) -> int:
    store = snapshots.read_store(args.store)
    if args.key not in store:
        return _fail(f"store has no matrix {args.key!r}; "
                     f"available: {sorted(store.keys())}")
    sm = store[args.key]
    if not 1 <= args.modes <= min(sm.data.shape):
        return _fail(f"--modes must be in [1, {min(sm.data.shape)}]")
    basis = rom.pod(sm, args.modes)
    energy = rom.snapshot_energy(basis.sigma)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshots.write_snapshot_file(
        out / f"basis_{args.key}_{args.modes}.snap", basis.Psi,
        {"kind": "basis", "source": args.key, "modes": args.modes})
    with open(out / f"energy_{args.key}.csv", "w") as fh:
        fh.write("index,sigma,cumulative_energy\n")
        for idx, (sig, en) in enumerate(zip(basis.sigma, energy)):
            fh.write(f"{idx},{sig:.17g},{en:.17g}\n")
    captured = energy[args.modes - 1]
    print(f"pod: {args.modes} modes of {args.key} capture "
          f"{captured:.12f} of snapshot energy")
    return 0


def cmd_couple(args) -> int:
    try:
        state_modes = _parse_state_model(args.state)
        adjoint_source, adjoint_modes = _parse_adjoint_model(args.adjoint)
    except ValueError as exc:
        return _fail(str(exc))

    spec = _benchmark_spec(args)
    entry = bench.ExperimentEntry(
        label=f"{args.state}/{args.adjoint}", state_modes=state_modes,
        adjoint_modes=adjoint_modes,
        adjoint_source=adjoint_source or "mgd1")
    ctx = bench.ExperimentContext(spec)
    row, result = ctx.run_entry(entry)

    print(f"{row.label}: rel L2 {row.rel_l2:.6e}, rel H1 {row.rel_h1:.6e}, "
          f"avg iterations {row.avg_iterations:.2f}, "
          f"converged {row.all_converged}, wall {row.wall_seconds:.2f}s")
    if args.report is not None:
        bench.write_report_csv([row], args.report)
        print(f"report written to {args.report}")
    if args.strict and not row.all_converged:
        print("error: coupled solve did not converge at every timestep",
              file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    spec = _benchmark_spec(args)
    rows = bench.run_experiment(spec, bench.standard_entries(), args.out)
    for row in rows:
        print(f"{row.label}: rel L2 {row.rel_l2:.6e}, "
              f"avg iterations {row.avg_iterations:.2f}")
    print(f"report files written to {args.out}")
    if args.strict and not all(row.all_converged for row in rows):
        return 1
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for trial in range(args.trials):
        dec, ops_1, ops_2, u_prev_1, u_prev_2, g = coupling.random_gradient_instance(
            args.level, seed=args.seed + trial, nu=args.nu, dt=args.dt)
        err = coupling.fd_gradient_check(
            ops_1, ops_2, dec.trace_free(1), dec.trace_free(2), ops_1.M_g,
            u_prev_1, u_prev_2, g, args.delta, eps=args.eps,
            seed=args.seed + trial)
        worst = max(worst, err)
    ok = worst <= args.check_tol
    print(f"gradcheck: max relative mismatch {worst:.3e} over {args.trials} "
          f"trials ({'pass' if ok else 'FAIL'}, tolerance {args.check_tol:.1e})")
    return 0 if ok else 1


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="obcoupling",
        description="Optimization-based coupling of advection-diffusion "
                    "subdomain models")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file of default values for the subcommand")
    subs = parser.add_subparsers(dest="command", required=True)
    table = {}

    def register(sub):
        # accept --config in either position, before or after the subcommand
        sub.add_argument("--config", type=str, default=None, help=argparse.SUPPRESS)

    sub = subs.add_parser("monolithic", help="solve the reference and store "
                          "state snapshots")
    _add_scenario_args(sub)
    sub.add_argument("--out", required=True, help="output store directory")
    sub.set_defaults(func=cmd_monolithic)
    register(sub)
    table["monolithic"] = sub

    sub = subs.add_parser("collect-adjoint", help="collect adjoint snapshots")
    _add_scenario_args(sub)
    _add_descent_args(sub)
    sub.add_argument("--method", choices=("gdra", "mgd"), required=True)
    sub.add_argument("--m", type=int, default=1,
                     help="descent iterations per timestep (mgd)")
    sub.add_argument("--state-store", default=None,
                     help="state snapshot store directory (mgd)")
    sub.add_argument("--gdra-delta", type=float, default=1e-14)
    sub.add_argument("--gdra-tol", type=float, default=1e-12)
    sub.add_argument("--workers", type=int, default=1,
                     help="thread count for mgd collection")
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_collect_adjoint)
    register(sub)
    table["collect-adjoint"] = sub

    sub = subs.add_parser("pod", help="build a POD basis from stored snapshots")
    sub.add_argument("--store", required=True, help="snapshot store directory")
    sub.add_argument("--key", default="state_1",
                     help="which matrix to decompose (default state_1)")
    sub.add_argument("--modes", type=int, required=True)
    sub.add_argument("--out", required=True, help="output directory")
    sub.set_defaults(func=cmd_pod)
    register(sub)
    table["pod"] = sub

    sub = subs.add_parser("couple", help="run one coupled solve and report "
                          "errors against the monolithic reference")
    _add_scenario_args(sub)
    _add_descent_args(sub)
    sub.add_argument("--state", default="fom",
                     help="fom or rom:<modes> (applies to both subdomains)")
    sub.add_argument("--adjoint", default="full",
                     help="full, state:<modes>, gdra:<modes> or mgd<m>:<modes>")
    sub.add_argument("--gdra-delta", type=float, default=1e-14)
    sub.add_argument("--gdra-tol", type=float, default=1e-12)
    sub.add_argument("--workers", type=int, default=1)
    sub.add_argument("--report", default=None, help="write a one-row CSV here")
    sub.add_argument("--strict", action="store_true",
                     help="exit 1 if any timestep fails to converge")
    sub.set_defaults(func=cmd_couple)
    register(sub)
    table["couple"] = sub

    sub = subs.add_parser("report", help="run the standard comparison set")
    _add_scenario_args(sub)
    _add_descent_args(sub)
    sub.add_argument("--gdra-delta", type=float, default=1e-14)
    sub.add_argument("--gdra-tol", type=float, default=1e-12)
    sub.add_argument("--workers", type=int, default=1)
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--strict", action="store_true")
    sub.set_defaults(func=cmd_report)
    register(sub)
    table["report"] = sub

    sub = subs.add_parser("gradcheck", help="verify the adjoint gradient "
                          "against central differences")
    sub.add_argument("--level", type=int, default=8)
    sub.add_argument("--nu", type=float, default=1e-2)
    sub.add_argument("--dt", type=float, default=5e-2)
    sub.add_argument("--delta", type=float, default=1e-3)
    sub.add_argument("--eps", type=float, default=1e-5)
    sub.add_argument("--trials", type=int, default=5)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--check-tol", type=float, default=1e-5)
    sub.set_defaults(func=cmd_gradcheck)
    register(sub)
    table["gradcheck"] = sub

    return parser, table


def _apply_config(argv: list[str], parser, table) -> None:
    """Merge JSON config values as subcommand defaults (flags still win)."""
    path = None
    for idx, token in enumerate(argv):
        if token == "--config":
            if idx + 1 >= len(argv):
                parser.error("--config expects a path")
            path = argv[idx + 1]
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
    if path is None:
        return
    try:
        values = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {path}: {exc}")
    if not isinstance(values, dict):
        parser.error(f"config {path} must hold a JSON object")

    command = None
    skip_next = False
    for tok in argv:
        if skip_next:
            skip_next = False
            continue
        if tok == "--config":
            skip_next = True
            continue
        if not tok.startswith("-"):
            command = tok
            break
    if command not in table:
        parser.error("config requires a subcommand")
    sub = table[command]
    known = {action.dest for action in sub._actions}
    unknown = set(values) - known
    if unknown:
        parser.error(f"config keys not accepted by {command}: {sorted(unknown)}")
    sub.set_defaults(**values)


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser, table = build_parser()
    _apply_config(list(argv), parser, table)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

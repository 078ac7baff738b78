"""Command-line front-end: ``solve``, ``ladder`` and ``validate``.

Exit codes
----------
0  success
2  configuration error (bad flags, config file or under-resolved discretization)
3  linear solve failed
4  an iterative solver did not converge
5  other numerical failure (singular support, inverted element, zero reference)
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .benchmarks import (CSV_HEADER, ConvergenceResult, LadderEntry, SolveOptions, evaluate,
                         get_benchmark, run_convergence, write_csv)
from .config import build_config, parse_value, read_config, thread_limit
from .exceptions import ConfigError, NoConvergence, NomError, SolveFailed
from .multi_index import count_indexes
from .point_cloud import WEIGHTS, read_cloud

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVE_FAILED = 3
EXIT_NO_CONVERGENCE = 4
EXIT_NUMERICAL = 5

logger = logging.getLogger("honom")


def exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, SolveFailed):
        return EXIT_SOLVE_FAILED
    if isinstance(exc, NoConvergence):
        return EXIT_NO_CONVERGENCE
    return EXIT_NUMERICAL


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--benchmark")
    common.add_argument("--cloud", help="point-cloud file replacing the generated lattice")
    common.add_argument("--nodes", help="nodes per axis (comma list for ladders)")
    common.add_argument("--order", dest="orders", help="operator order p")
    common.add_argument("--orders", dest="orders", help="comma list of orders")
    common.add_argument("--phg", help="hourglass penalty (comma list for ladders)")
    common.add_argument("--weight", choices=WEIGHTS)
    common.add_argument("--gauss-shape", dest="gauss_shape")
    common.add_argument("--neighbors")
    common.add_argument("--penalty")
    common.add_argument("--hourglass-scale", dest="hourglass_scale")
    common.add_argument("--seed")
    common.add_argument("--perturb")
    common.add_argument("--tol")
    common.add_argument("--max-iter", dest="max_iter")
    common.add_argument("--load-steps", dest="load_steps")
    common.add_argument("--out", help="output directory")
    common.add_argument("--no-runtime", dest="runtime", action="store_const", const="false",
                        help="write nan in the runtime_s column (byte-stable CSVs)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="honom", description="Higher-order nonlocal operator solver.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[common], help="solve one discretization")
    sub.add_parser("ladder", parents=[common], help="refinement study with fitted rates")
    sub.add_parser("validate", parents=[common], help="dry-run checks, no solve")
    return p


_KEYS = ("benchmark", "cloud", "nodes", "orders", "phg", "weight", "gauss_shape", "neighbors",
         "penalty", "hourglass_scale", "seed", "perturb", "tol", "max_iter", "load_steps", "out",
         "runtime")


def load_config(args):
    file_values = read_config(args.config) if args.config else {}
    overrides = {}
    for key in _KEYS:
        val = getattr(args, key, None)
        if val is not None:
            k, v = parse_value(key, val)
            overrides[k] = v
    return build_config(file_values, overrides)


def _options(cfg, log=None):
    cloud = read_cloud(cfg.cloud) if cfg.cloud else None
    return SolveOptions(weight=cfg.weight, gauss_shape=cfg.gauss_shape, neighbors=cfg.neighbors,
                        penalty=cfg.penalty, seed=cfg.seed, perturb=cfg.perturb, tol=cfg.tol,
                        max_iter=cfg.max_iter, load_steps=cfg.load_steps,
                        hourglass_scale=cfg.hourglass_scale, cloud=cloud, log=log)


def _entries(cfg, bench, single):
    if single:
        if len(cfg.nodes) > 1 or len(cfg.orders) > 1 or len(cfg.phg) > 1:
            raise ConfigError("solve takes a single value of nodes, order and phg")
    if not (cfg.nodes or cfg.orders or cfg.phg):
        return list(bench.ladder[:1] if single else bench.ladder)
    base = bench.ladder[0]
    nodes = cfg.nodes or (base.nodes,)
    if cfg.cloud and not cfg.nodes:
        nodes = (0,)
    orders = cfg.orders or (base.order,)
    phgs = cfg.phg or (base.phg,)
    table = {(e.nodes, e.order, e.phg): e for e in bench.ladder}
    return [table.get((n, p, h), LadderEntry(n, p, h))
            for p, h, n in itertools.product(orders, phgs, nodes)]


def _tag(bench, entry):
    return f"{bench.name}_n{entry.nodes}_p{entry.order}_phg{entry.phg:g}"


def write_field(path, solution):
    """Per-point dump ``x1 .. xd value1 .. valuek``."""
    X = solution.cloud.positions
    V = np.asarray(solution.values, dtype=float).reshape(len(X), -1)
    d, k = X.shape[1], V.shape[1]
    head = " ".join([f"x{i + 1}" for i in range(d)] + [f"value{j + 1}" for j in range(k)])
    np.savetxt(path, np.hstack([X, V]), fmt="%.17g", header=head, comments="# ")


def _cmd_validate(cfg, out):
    bench = get_benchmark(cfg.benchmark)
    opts = bench.options(_options(cfg))
    errors = 0
    for entry in _entries(cfg, bench, single=False):
        label = f"nodes={entry.nodes} p={entry.order} phg={entry.phg:g}"
        k = bench.neighbor_count(entry.order, opts)
        n_p = count_indexes(bench.dim, entry.order)
        n = len(opts.cloud) if opts.cloud is not None else entry.nodes ** bench.dim
        # operator, monomial and stabilization arrays dominate
        mem = 8 * n * (k + 1) * (2 * n_p + k + 1) + 12 * n * (k + 1) ** 2
        msgs = bench.check(entry, opts)
        for level, msg in msgs:
            out(f"{level}: {label}: {msg}")
            errors += level == "error"
        if not msgs:
            out(f"ok: {label}: {n} points, k={k} >= n_p={n_p}, ~{mem / 2**20:.1f} MiB")
    if errors:
        return EXIT_CONFIG
    out("ok")
    return EXIT_OK


def _run(cfg, single, out, workers=1):
    bench = get_benchmark(cfg.benchmark)
    entries = _entries(cfg, bench, single)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    log_lines = ["# step iter rel_increment residual_norm"]
    opts = _options(cfg, log=log_lines.append)

    def save(entry, rep, sol):
        write_field(outdir / f"{_tag(bench, entry)}_field.txt", sol)
        log_lines.extend(f"# {key} = {val}" for key, val in rep.extras.items())

    if single:
        e = entries[0]
        log_lines.append(f"# nodes={e.nodes} p={e.order} phg={e.phg:g}")
        try:
            rep, sol = evaluate(bench, entries[0], opts)
        finally:
            (outdir / f"{bench.name}.log").write_text("\n".join(log_lines) + "\n")
        save(entries[0], rep, sol)
        result = ConvergenceResult([rep], {}, [])
    else:
        result = run_convergence(bench, entries, opts, workers=workers, callback=save)
        for entry, exc in result.failures:
            out(f"failed: {_tag(bench, entry)}: {type(exc).__name__}: {exc}", err=True)
        for (p, phg), slope in result.rates.items():
            line = f"rate p={p} phg={phg:g}: " + ("absent" if slope is None else f"{slope:.4f}")
            log_lines.append("# " + line)
            out(line)
    write_csv(outdir / f"{bench.name}.csv", result.reports, runtime=cfg.runtime)
    (outdir / f"{bench.name}.log").write_text("\n".join(log_lines) + "\n")
    out(CSV_HEADER)
    for r in result.reports:
        out(r.csv_row(cfg.runtime))
    return EXIT_OK if not result.failures else exit_code(result.failures[0][1])


def main(argv=None) -> int:
    def out(msg, err=False):
        print(msg, file=sys.stderr if err else sys.stdout)

    try:
        args = _parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args)
        threads = thread_limit()
        with threadpool_limits(limits=threads):
            if args.command == "validate":
                return _cmd_validate(cfg, out)
            return _run(cfg, args.command == "solve", out, workers=threads or 1)
    except NomError as exc:
        out(f"honom: {type(exc).__name__}: {exc}", err=True)
        return exit_code(exc)
    except (OSError, ValueError) as exc:
        out(f"honom: ConfigError: {exc}", err=True)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

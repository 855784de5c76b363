"""Command-line entry point: ``htnet <subcommand> ...``.

Exit codes: 0 success, 1 validation failure or usage error, 2 numerical
failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .errors import HTNetError, NumericalError, ValidationError
from .harness import convergence_experiment, oracle_experiment
from .io import CsvWriter, column_block, dumps, fmt, read_csv, split_reps, write_json
from .limitproc import build_covariance, resolve_mode, simulate_limit_replications
from .netmodel import check_heavy_traffic, load_network, network_from_config
from .regulator import DEFAULT_TOL, RegulatorInput, regulate
from .rng import replication_seed
from .scaling import GridPath, ScaledBundle, scale_path
from .simulator import PathRecord, _check_grid, simulate_path

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_VALIDATION)


def _positive(kind):
    def conv(text):
        val = kind(text)
        if val <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return val
    return conv


def _nonneg_int(text):
    val = int(text)
    if val < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return val


def _n_list(text):
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"n values must be positive, got {text!r}")
    return vals


def _run_config(args, network: dict | None) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    cfg["version"] = __version__
    if network is not None:
        cfg["network"] = network
    return cfg


# --- subcommands -----------------------------------------------------------

def cmd_validate(args) -> int:
    params = load_network(args.config, renormalize=args.renormalize)
    report = check_heavy_traffic(params, args.tol)
    out = {"config": _run_config(args, params.to_config()), "m": params.m.tolist(), **report.to_dict()}
    sys.stdout.write(dumps(out))
    if not report.passes:
        sys.stderr.write(f"heavy-traffic check failed: HT1 residuals {report.ht1_residuals.tolist()}, "
                         f"HT2 residual {report.ht2_residual!r}\n")
        return EXIT_VALIDATION
    return EXIT_OK


def _path_columns(J, K):
    cols = ["rep", "t"]
    cols += [f"q_{j + 1}" for j in range(J)] + [f"v_{k + 1}" for k in range(K)]
    cols += [f"Tbusy_{j + 1}" for j in range(J)] + [f"intV_{k + 1}" for k in range(K)]
    cols += [f"D_{j + 1}" for j in range(J)] + [f"F_{k + 1}" for k in range(K)]
    cols += [f"Phi_{j + 1}_{k + 1}" for j in range(J) for k in range(K)]
    cols += [f"Psi_{k + 1}_{j + 1}" for k in range(K) for j in range(J)]
    return cols


def _path_rows(rep: int, rec: PathRecord):
    G = len(rec.grid)
    ints = np.hstack([rec.q, rec.v])
    floats = np.hstack([rec.T_busy, rec.intV])
    counts = np.hstack([rec.D, rec.F, rec.Phi.reshape(G, -1), rec.Psi.reshape(G, -1)])
    for i in range(G):
        yield ([rep, float(rec.grid[i])] + [int(x) for x in ints[i]] + [float(x) for x in floats[i]]
               + [int(x) for x in counts[i]])


def cmd_simulate(args) -> int:
    params = load_network(args.config, renormalize=args.renormalize)
    _check_grid(args.horizon, args.grid)
    cfg = _run_config(args, params.to_config())
    with CsvWriter(args.out, cfg, _path_columns(params.J, params.K)) as w:
        for r in range(args.reps):
            seed = replication_seed(args.seed, r)
            rec = simulate_path(params, args.n, args.horizon, args.grid, seed)
            w.rows(_path_rows(r, rec))
            w.summary({"rep": r, "seed": seed, "events": rec.n_events, "total_jobs": rec.total_jobs})
    return EXIT_OK


def _records_from_csv(path):
    cfg, cols, values, _ = read_csv(path)
    if "network" not in cfg or "n" not in cfg:
        raise ValidationError(f"{path} has no embedded simulate configuration")
    params = network_from_config(cfg["network"])
    J, K = params.J, params.K
    ix = lambda names: [cols.index(c) for c in names]
    records = {}
    for rep, block in split_reps(cols, values).items():
        G = len(block)
        as_int = lambda names: block[:, ix(names)].astype(np.int64)
        records[rep] = PathRecord(
            grid=block[:, cols.index("t")],
            q=as_int([f"q_{j + 1}" for j in range(J)]),
            v=as_int([f"v_{k + 1}" for k in range(K)]),
            T_busy=block[:, ix([f"Tbusy_{j + 1}" for j in range(J)])],
            intV=block[:, ix([f"intV_{k + 1}" for k in range(K)])],
            D=as_int([f"D_{j + 1}" for j in range(J)]),
            F=as_int([f"F_{k + 1}" for k in range(K)]),
            Phi=as_int([f"Phi_{j + 1}_{k + 1}" for j in range(J) for k in range(K)]).reshape(G, J, K),
            Psi=as_int([f"Psi_{k + 1}_{j + 1}" for k in range(K) for j in range(J)]).reshape(G, K, J),
            n=int(cfg["n"]), seed=replication_seed(int(cfg["seed"]), rep), params=params,
            total_jobs=int(block[0, ix([f"q_{j + 1}" for j in range(J)] + [f"v_{k + 1}" for k in range(K)])].sum()),
        )
    return cfg, params, records


def cmd_scale(args) -> int:
    src_cfg, params, records = _records_from_csv(args.paths)
    cfg = _run_config(args, params.to_config())
    cfg["n"] = src_cfg["n"]
    cfg["source"] = {k: src_cfg[k] for k in ("seed", "horizon", "grid", "reps") if k in src_cfg}
    bundles = {rep: scale_path(records[rep]) for rep in sorted(records)}
    if not bundles:
        raise ValidationError(f"{args.paths} contains no replications")
    sample = next(iter(bundles.values()))
    cols = ["rep", "t"] + [lab for name in ScaledBundle.FIELDS for lab in getattr(sample, name).labels]
    with CsvWriter(args.out, cfg, cols) as w:
        for rep, b in bundles.items():
            block = np.hstack([getattr(b, name).values for name in ScaledBundle.FIELDS])
            w.rows([rep, float(t)] + row.tolist() for t, row in zip(b.hatQ.grid, block))
    return EXIT_OK


def cmd_regulate(args) -> int:
    src_cfg, cols, values, _ = read_csv(args.scaled)
    if "network" not in src_cfg:
        raise ValidationError(f"{args.scaled} has no embedded network configuration")
    params = network_from_config(src_cfg["network"])
    xi_idx = column_block(cols, "xi")
    zeta_idx = column_block(cols, "zeta")
    if len(xi_idx) != params.J or len(zeta_idx) != params.K:
        raise ValidationError(f"{args.scaled} lacks xi/zeta columns for J={params.J}, K={params.K}")
    cfg = _run_config(args, params.to_config())
    out_cols = (["rep", "t"] + [f"x_{j + 1}" for j in range(params.J)]
                + [f"u_{j + 1}" for j in range(params.J)] + [f"y_{k + 1}" for k in range(params.K)])
    with CsvWriter(args.out, cfg, out_cols) as w:
        for rep, block in split_reps(cols, values).items():
            g = block[:, cols.index("t")]
            inp = RegulatorInput(GridPath(g, block[:, xi_idx]), GridPath(g, block[:, zeta_idx]), params)
            out = regulate(inp, mode=args.mode, tol=args.tol, max_iter=args.max_iter)
            stack = np.hstack([out.x.values, out.u.values, out.y.values])
            w.rows([rep, float(t)] + row.tolist() for t, row in zip(g, stack))
            w.summary({"rep": rep, "residual": out.residual, "iterations": out.iterations, "mode": out.mode})
    return EXIT_OK


def cmd_limit(args) -> int:
    params = load_network(args.config, renormalize=args.renormalize)
    grid = _check_grid(args.horizon, args.grid)
    cov = build_covariance(params, resolve_mode(args.cov_mode))
    cfg = _run_config(args, params.to_config())
    cfg["covariance"] = cov.to_dict()
    J, K = params.J, params.K
    cols = (["rep", "t"] + [f"Qstar_{j + 1}" for j in range(J)] + [f"Istar_{j + 1}" for j in range(J)]
            + [f"Vstar_{k + 1}" for k in range(K)] + [f"xi_{j + 1}" for j in range(J)]
            + [f"zeta_{k + 1}" for k in range(K)])
    samples = simulate_limit_replications(params, cov, grid, args.seed, args.reps, tol=args.tol)
    with CsvWriter(args.out, cfg, cols) as w:
        for r, s in enumerate(samples):
            block = np.hstack([s.Qstar.values, s.Istar.values, s.Vstar.values, s.driver.values])
            w.rows([r, float(t)] + row.tolist() for t, row in zip(grid, block))
            w.summary({"rep": r, "seed": replication_seed(args.seed, r), "residual": s.output.residual})
    return EXIT_OK


def cmd_compare(args) -> int:
    params = load_network(args.config, renormalize=args.renormalize)
    _check_grid(args.horizon, args.grid)
    cov_mode = None if args.cov_mode == "auto" else resolve_mode(args.cov_mode)
    report = convergence_experiment(params, args.n, args.reps, args.horizon, args.grid, args.seed,
                                    cov_mode=cov_mode, window=args.window)
    report["config"] = _run_config(args, params.to_config())
    write_json(args.out, report)
    csv_path = args.csv or str(args.out).rsplit(".", 1)[0] + ".csv"
    cols = ["n", "coord", "t", "ks", "mean_prelimit", "mean_limit", "var_prelimit", "var_limit",
            "mean_gap", "var_gap"]
    with open(csv_path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in report["marginals"]:
            fh.write(",".join(row["coord"] if c == "coord" else fmt(row[c]) for c in cols) + "\n")
    return EXIT_OK if report["passes"] else EXIT_VALIDATION


def cmd_oracle(args) -> int:
    params = load_network(args.config, renormalize=args.renormalize)
    report = check_heavy_traffic(params)
    if not report.passes:
        sys.stderr.write("heavy-traffic check failed; the pathwise identity needs exact critical loading\n")
        return EXIT_VALIDATION
    res = oracle_experiment(params, args.n, args.horizon, args.grid, args.reps, args.seed, args.tol)
    res["config"] = _run_config(args, params.to_config())
    write_json(args.out, res)
    return EXIT_OK if res["passes"] else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="htnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"htnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def network_cmd(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("config", help="network JSON config")
        p.add_argument("--renormalize", action="store_true", help="rescale routing rows that miss 1 by > 1e-12")
        return p

    p = network_cmd("validate", "check routing matrices and heavy-traffic conditions")
    p.add_argument("--tol", type=_positive(float), default=1e-9)
    p.set_defaults(func=cmd_validate)

    p = network_cmd("simulate", "simulate pre-limit replications to CSV")
    p.add_argument("--n", type=_positive(int), default=100)
    p.add_argument("--horizon", type=_positive(float), default=10.0)
    p.add_argument("--grid", type=_positive(float), default=0.01)
    p.add_argument("--reps", type=_positive(int), default=100)
    p.add_argument("--seed", type=_nonneg_int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scale", help="fluid/diffusion scalings and free processes of simulated paths")
    p.add_argument("paths", help="CSV written by 'simulate'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("regulate", help="apply the regulator to scaled free processes")
    p.add_argument("scaled", help="CSV written by 'scale'")
    p.add_argument("--mode", choices=("forward", "picard"), default="forward")
    p.add_argument("--tol", type=_positive(float), default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=_positive(int), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regulate)

    p = network_cmd("limit", "sample the limiting regulated Brownian motion")
    p.add_argument("--grid", type=_positive(float), default=0.005)
    p.add_argument("--horizon", type=_positive(float), default=10.0)
    p.add_argument("--reps", type=_positive(int), default=1000)
    p.add_argument("--seed", type=_nonneg_int, default=7)
    p.add_argument("--cov-mode", default="projected",
                   choices=("written", "projected", "multinomial",
                            "as_written", "consistency_projected", "multinomial_routing"))
    p.add_argument("--tol", type=_positive(float), default=DEFAULT_TOL)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_limit)

    p = network_cmd("compare", "weak-convergence experiment across n")
    p.add_argument("--n", type=_n_list, default=[25, 100, 400])
    p.add_argument("--reps", type=_positive(int), default=2000)
    p.add_argument("--horizon", type=_positive(float), default=10.0)
    p.add_argument("--grid", type=_positive(float), default=0.005)
    p.add_argument("--seed", type=_nonneg_int, default=42)
    p.add_argument("--window", type=_positive(float), default=1.0, help="covariance window length")
    p.add_argument("--cov-mode", default="auto",
                   choices=("auto", "written", "projected", "multinomial",
                            "as_written", "consistency_projected", "multinomial_routing"))
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="long-form marginals CSV (default: <out>.csv)")
    p.set_defaults(func=cmd_compare)

    p = network_cmd("oracle", "pathwise regulator oracle over replications, with grid-doubling slope")
    p.add_argument("--n", type=_positive(int), default=100)
    p.add_argument("--horizon", type=_positive(float), default=5.0)
    p.add_argument("--grid", type=_positive(float), default=0.001)
    p.add_argument("--reps", type=_positive(int), default=100)
    p.add_argument("--seed", type=_nonneg_int, default=42)
    p.add_argument("--tol", type=_positive(float), default=DEFAULT_TOL)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except (ValidationError, ValueError) as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return EXIT_VALIDATION
    except HTNetError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERICAL
    except OSError as exc:
        sys.stderr.write(f"I/O error: {exc}\n")
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command-line entry point.

    spinn train           CONFIG [--set key=value ...]
    spinn evaluate        CONFIG [--set ...] [--checkpoint PATH]
    spinn simulate-paths  CONFIG [--set ...] [--count N]
    spinn reference       CONFIG [--set ...] [--count N]
    spinn bounds-audit    CONFIG [--set ...] [--count N]

Every command reads one config file (see `config.py` for the format),
applies `--set` overrides (flags win), and writes its artifacts into the
config's output directory.  Exit status 0 on success; on failure, one
line `error: ...` on stderr and exit status 2.

The environment variable SPINN_THREADS pins the BLAS/OpenMP thread count
(it must be set before numpy loads, which is why all heavy imports here
are local to the command functions).
"""

from __future__ import annotations

import argparse
import os
import sys

# spawn-key tags for the CLI's independent randomness streams; training
# owns 0-2, so artifact streams start above them
_EVAL_STREAM = 3
_SIM_STREAM = 4
_REF_STREAM = 5
_AUDIT_STREAM = 6
_DUMP_STREAM = 7


def _pin_threads():
    value = os.environ.get("SPINN_THREADS")
    if value is None:
        return
    if not value.isdigit() or int(value) < 1:
        raise ValueError(f"SPINN_THREADS must be a positive integer, got {value!r}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ[var] = value


def _load_config(args):
    from .config import parse_config

    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ValueError(f"cannot read config {args.config!r}: {err.strerror}") from None
    config = parse_config(text, overrides=args.set)
    os.makedirs(config.outdir, exist_ok=True)
    return config


def _out(config, name):
    return os.path.join(config.outdir, name)


def _cmd_train(args):
    from .config import serialize_config
    from .training import save_model, train, write_loss_csv

    config = _load_config(args)
    train_config = config.to_train_config()

    callback = None
    if config.checkpoint_every:

        def callback(epoch, snapshot):
            save_model(_out(config, f"checkpoint_epoch_{epoch:06d}.npz"), snapshot)

    model = train(train_config, checkpoint_callback=callback)
    save_model(_out(config, "checkpoint.npz"), model)
    with open(_out(config, "loss.csv"), "w", encoding="utf-8") as fh:
        write_loss_csv(model, fh)
    with open(_out(config, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(config))
    print(
        f"train: {train_config.epochs} epochs in {model.wall_time:.1f}s, "
        f"final batch loss {model.loss_history[-1]:.6g} -> {_out(config, 'checkpoint.npz')}"
    )
    return 0


def _cmd_evaluate(args):
    from .evaluation import err_metrics, trajectory_dump, write_error_csv
    from .paths import TimeGrid, derive_seed
    from .training import load_model

    config = _load_config(args)
    checkpoint = args.checkpoint or _out(config, "checkpoint.npz")
    if not os.path.exists(checkpoint):
        raise ValueError(f"checkpoint not found: {checkpoint}")
    model = load_model(checkpoint)

    eval_grid = TimeGrid(config.eval_grid_n, model.grid.horizon)
    report = err_metrics(
        model, config.eval_paths, derive_seed(config.seed, _EVAL_STREAM), eval_grid=eval_grid
    )
    with open(_out(config, "errors.csv"), "w", encoding="utf-8") as fh:
        write_error_csv(report, fh)
    dump_seed = derive_seed(config.seed, _DUMP_STREAM)
    for i in range(config.dump_paths):
        with open(_out(config, f"dump_{i:04d}.csv"), "w", encoding="utf-8") as fh:
            trajectory_dump(model, i, dump_seed, fh)
    print(
        f"evaluate: M={report.paths} err_time={report.err_time:.6g} "
        f"err_terminal={report.err_terminal:.6g} "
        f"(baseline {report.baseline_err_time:.6g}/{report.baseline_err_terminal:.6g})"
    )
    return 0


def _cmd_simulate_paths(args):
    from .paths import TimeGrid, derive_seed, sample_levy_path, write_path_csv

    config = _load_config(args)
    grid = TimeGrid(config.n_mesh, config.horizon)
    for i in range(args.count):
        path = sample_levy_path(config.noise, grid, derive_seed(config.seed, _SIM_STREAM, i))
        with open(_out(config, f"path_{i:04d}.csv"), "w", encoding="utf-8") as fh:
            write_path_csv(path, fh)
    print(f"simulate-paths: wrote {args.count} path(s) to {config.outdir}")
    return 0


def _cmd_reference(args):
    from .paths import TimeGrid, derive_seed, sample_levy_path
    from .solvers import euler_maruyama, reference_grid, subsample

    config = _load_config(args)
    sde = config.to_sde()
    coarse = TimeGrid(config.n_mesh, config.horizon)
    fine_grid = reference_grid(config.horizon)
    for i in range(args.count):
        seed = derive_seed(config.seed, _REF_STREAM, i)
        fine = sample_levy_path(sde.noise, fine_grid, seed)
        trajectory = subsample(euler_maruyama(sde, fine), coarse)
        with open(_out(config, f"reference_{i:04d}.csv"), "w", encoding="utf-8") as fh:
            fh.write(f"# seed={seed}\n")
            fh.write("t," + ",".join(f"x_{k + 1}" for k in range(sde.dim)) + "\n")
            for t, row in zip(coarse.points, trajectory.values):
                fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")
    print(f"reference: wrote {args.count} Euler trajectory CSV(s) to {config.outdir}")
    return 0


def _cmd_bounds_audit(args):
    from .paths import TimeGrid, derive_seed, sample_levy_path
    from .sde import a_priori_bounds, make_rode_rhs
    from .solvers import integrate_rode

    config = _load_config(args)
    sde = config.to_sde()
    rhs = make_rode_rhs(sde)
    grid = TimeGrid(config.n_mesh, config.horizon)

    paths_ok = 0
    checks_ok = 0
    checks_total = 0
    with open(_out(config, "bounds.csv"), "w", encoding="utf-8") as fh:
        fh.write(f"# seed={config.seed}\n")
        fh.write("path,seed,check,sup_y,sup_bound,sup_ok,int_dy2,int_bound,int_ok\n")
        for i in range(args.count):
            seed = derive_seed(config.seed, _AUDIT_STREAM, i)
            path = sample_levy_path(sde.noise, grid, seed)
            y_values = integrate_rode(rhs, path, sde.x0).values
            report = a_priori_bounds(rhs, sde, path, y_values)
            paths_ok += report.satisfied
            for check in report.checks:
                checks_total += 1
                checks_ok += check.ok
                fh.write(
                    f"{i},{seed},{check.name},{report.sup_y:.17g},{check.sup_bound:.17g},"
                    f"{int(check.sup_ok)},{report.int_dy2:.17g},{check.int_bound:.17g},"
                    f"{int(check.int_ok)}\n"
                )
    print(
        f"bounds-audit: {paths_ok}/{args.count} paths satisfied all bounds "
        f"({checks_ok}/{checks_total} checks)"
    )
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="spinn",
        description="Pathwise neural SDE solver: train, evaluate, and audit on one config.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="path to the run configuration file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable; flags win)",
        )

    p = sub.add_parser("train", help="train a model; writes checkpoint.npz + loss.csv")
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="error metrics against the exact reference")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint to evaluate (default: outdir/checkpoint.npz)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate-paths", help="sample driving-noise paths to CSV")
    common(p)
    p.add_argument("--count", type=int, default=1, help="number of paths (default 1)")
    p.set_defaults(func=_cmd_simulate_paths)

    p = sub.add_parser("reference", help="Euler reference trajectories to CSV")
    common(p)
    p.add_argument("--count", type=int, default=1, help="number of trajectories (default 1)")
    p.set_defaults(func=_cmd_reference)

    p = sub.add_parser("bounds-audit", help="a priori trajectory bounds pass/fail table")
    common(p)
    p.add_argument("--count", type=int, default=1000, help="number of paths (default 1000)")
    p.set_defaults(func=_cmd_bounds_audit)

    return parser


def main(argv=None):
    try:
        _pin_threads()
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # one-line machine-parsable failure
        message = " ".join(str(err).split())
        print(f"error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

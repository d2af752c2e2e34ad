"""Command-line entry point.

Subcommands: run, resume, report, inspect-checkpoint, make-data. Exit codes:
0 success, 2 bad configuration or input data, 3 capacity exhausted,
4 corrupt or unsupported checkpoint.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import checkpoint_version
from .config import load_run_config
from .errors import CapacityExhausted, CheckpointError, ConfigError, IdxFormatError
from .metrics import lifelong_accuracy
from .runner import execute_run, new_state, state_from_checkpoint, write_reports
from .scenario import write_digit_idx

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_CHECKPOINT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subnetpack",
        description="Forget-free continual learning on bit-budgeted weight slots",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a full scenario run")
    run_p.add_argument("--config", required=True, help="key=value config file")
    run_p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")

    resume_p = sub.add_parser("resume", help="continue a checkpointed run")
    resume_p.add_argument("--checkpoint", required=True)
    resume_p.add_argument("--output-dir", default=None,
                          help="redirect reports and new checkpoints")

    report_p = sub.add_parser("report", help="re-emit reports from a checkpoint")
    report_p.add_argument("--checkpoint", required=True)
    report_p.add_argument("--output-dir", default=None)

    inspect_p = sub.add_parser("inspect-checkpoint",
                               help="print a checkpoint's contents")
    inspect_p.add_argument("--checkpoint", required=True)

    data_p = sub.add_parser("make-data",
                            help="generate procedural digit IDX files")
    data_p.add_argument("--out", required=True, help="output directory")
    data_p.add_argument("--n-train", type=int, default=24000)
    data_p.add_argument("--n-test", type=int, default=4000)
    data_p.add_argument("--seed", type=int, default=0)
    data_p.add_argument("--noise", type=float, default=0.12)
    return parser


def _print_outcome(state) -> None:
    print(f"tasks completed: {state.matrix.n_episodes}")
    print(f"lifelong accuracy: {lifelong_accuracy(state.matrix):.4f}")
    widths = " ".join(f"{t}:{state.psi_star[t]}" for t in sorted(state.psi_star))
    print(f"bit-widths per task: {widths}")
    print(f"reports in: {state.config.output_dir}")


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config, args.set)
    state = new_state(cfg)
    execute_run(state)
    _print_outcome(state)
    return EXIT_OK


def _cmd_resume(args) -> int:
    state = state_from_checkpoint(args.checkpoint, need_suite=True,
                                  output_dir=args.output_dir)
    if state.next_task >= state.suite.n_tasks:
        write_reports(state)
    else:
        execute_run(state)
    _print_outcome(state)
    return EXIT_OK


def _cmd_report(args) -> int:
    state = state_from_checkpoint(args.checkpoint, need_suite=False,
                                  output_dir=args.output_dir)
    paths = write_reports(state)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    version = checkpoint_version(args.checkpoint)
    state = state_from_checkpoint(args.checkpoint, need_suite=False)
    print(f"format version: {version}")
    print(f"mode: {state.config.mode}")
    print(f"model layers: {','.join(str(v) for v in state.config.model.layer_sizes)}")
    print(f"next task: {state.next_task}")
    for t in sorted(state.store.tasks):
        alloc = state.store.tasks[t]
        used = sum(alloc.mask.active_counts())
        print(f"task {t}: psi={alloc.psi} slots={used} "
              f"val_acc={state.q_quant.get(t, float('nan')):.4f}")
    for e, row in enumerate(state.matrix.rows):
        print(f"episode {e}: " + " ".join(f"{v:.4f}" for v in row))
    return EXIT_OK


def _cmd_make_data(args) -> int:
    paths = write_digit_idx(args.out, n_train=args.n_train, n_test=args.n_test,
                            seed=args.seed, noise=args.noise)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "resume": _cmd_resume,
    "report": _cmd_report,
    "inspect-checkpoint": _cmd_inspect,
    "make-data": _cmd_make_data,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, IdxFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityExhausted as exc:
        print(f"capacity exhausted in layers {list(exc.layers)}: {exc}",
              file=sys.stderr)
        return EXIT_CAPACITY
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())

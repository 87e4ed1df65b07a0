import argparse
import sys
from pathlib import Path

from scenario import resolve_scenario, run_scenario
from sweep import load_or_run_sweep, print_sweep
from training import train_pipeline
from utils.asthetics import format_banner, print_error
from utils.config import load_run_config
from utils.constants import DESK_CONFIG_PATH, MASTER_LOG_PATH, RUNS_DIR, SWEEP_DIR, WEIGHTS_FILENAME
from utils.errors import CascadeError
from utils.logging_utils import MasterLogger
from utils.states import CommandEnum
from utils.surrogate.serialization import load_weights


def parse_args(argv=None):
    """
    Three commands share one parser.

    run:   closed-loop (or --open-loop) scenario with artifacts under --out.
    train: dataset generation and surrogate training, weights under --out.
    sweep: steady-state y-vs-u curve and the derived operating points.
    """
    parser = argparse.ArgumentParser(description="Mixer-settler cascade simulation, training and control.")
    parser.add_argument("command", choices=[c.value for c in CommandEnum], help="What to do.")
    parser.add_argument(
        "--config", type=Path, default=DESK_CONFIG_PATH, help="Run configuration YAML (plant, training, control)."
    )
    parser.add_argument("--scenario", default="startup", help="startup, critical, perturbed or a configured name.")
    parser.add_argument("--weights", type=Path, default=None, help="Surrogate weights file (run).")
    parser.add_argument("--out", type=Path, default=None, help="Output directory.")
    parser.add_argument("--open-loop", action="store_true", help="Apply u_set directly instead of the NMPC move.")
    parser.add_argument("--seed", type=int, default=None, help="Override the scenario seed.")
    parser.add_argument(
        "--train", action="store_true", help="Train the surrogate first when the weights file does not exist."
    )
    parser.add_argument("--duration", type=float, default=None, help="Override the scenario duration in hours.")
    parser.add_argument("--quiet", action="store_true", help="No console reports.")
    return parser.parse_args(argv)


def run_command(args, config) -> None:
    scenario = resolve_scenario(args.scenario, config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.duration is not None:
        updates["duration"] = args.duration
    if updates:
        scenario = scenario.model_copy(update=updates)

    suffix = "_open" if args.open_loop else ""
    out_dir = args.out or Path(RUNS_DIR) / f"{scenario.name}{suffix}"

    model = None
    if not args.open_loop:
        weights = args.weights or Path(RUNS_DIR) / "model" / WEIGHTS_FILENAME
        if not weights.exists() and args.train:
            _, _, weights = train_pipeline(config, weights.parent, quiet=args.quiet)
        model = load_weights(weights)
    _, points = load_or_run_sweep(config, SWEEP_DIR)
    run_scenario(scenario, config, points, model, out_dir, args.open_loop, args.quiet)


def train_command(args, config) -> None:
    train_pipeline(config, args.out or Path(RUNS_DIR) / "model", quiet=args.quiet)


def sweep_command(args, config) -> None:
    sweep, points = load_or_run_sweep(config, args.out or SWEEP_DIR)
    if not args.quiet:
        print_sweep(sweep, points)


def main(argv=None) -> int:
    """
    Entry point: loads the run config and dispatches the command.

    Engine errors are logged to the master log, printed in red and turned into exit code 1.
    """
    args = parse_args(argv)

    master_logger = MasterLogger(init=True, clear=False, log_path=MASTER_LOG_PATH)
    master_logger.log(f"Command {args.command} started with config {args.config}")

    # Dictionary mapping commands to their handler functions.
    command_handler = {
        CommandEnum.RUN: run_command,
        CommandEnum.TRAIN: train_command,
        CommandEnum.SWEEP: sweep_command,
    }

    command = CommandEnum(args.command)
    try:
        config = load_run_config(args.config)
        if not args.quiet:
            print(format_banner(f"{command.value.upper()}  |  {args.config}"))
        command_handler[command](args, config)
    except CascadeError as e:
        master_logger.error(f"{type(e).__name__}: {e}")
        print_error(str(e))
        return 1
    master_logger.log(f"Command {args.command} finished")
    return 0


if __name__ == "__main__":
    sys.exit(main())

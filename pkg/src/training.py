"""
End-to-end surrogate training: sweep for the operating points, simulate the excitation
plan, fit the three stages, save the weights and print the training report.

How to run:
   python ./src/main.py train --config ./resources/configs/desk.yaml --out ./data/runs/desk
"""

from pathlib import Path
from typing import Tuple, Union

from colorama import Fore, Style

from sweep import OperatingPoints, load_or_run_sweep
from utils.asthetics import format_table, print_section
from utils.config import RunConfig
from utils.constants import DATASET_FILENAME, SWEEP_DIR, WEIGHTS_FILENAME
from utils.file_io import init_run_dir, save_yaml
from utils.logging_utils import MasterLogger, StandAloneLogger
from utils.surrogate.dataset import ExcitationPlan, generate_dataset, save_dataset
from utils.surrogate.networks import SurrogateModel
from utils.surrogate.serialization import save_weights
from utils.surrogate.training import TrainingReport, fit_surrogate

REPORT_FILENAME = "training_report.yaml"


def excitation_plan(config: RunConfig, points: OperatingPoints) -> ExcitationPlan:
    tc = config.training
    plant = config.plant
    return ExcitationPlan(
        n_trajectories=tc.n_trajectories,
        steps=tc.steps_per_trajectory,
        u_box=(plant.u_min, plant.u_max),
        q_box=(tc.q_range[0] * plant.q_nominal, tc.q_range[1] * plant.q_nominal),
        hold_range=tc.hold_range,
        saturated_share=tc.saturated_share,
        u_saturation=points.u_critical,
        seed=tc.seed,
    )


def train_pipeline(
    config: RunConfig,
    out_dir: Union[str, Path],
    quiet: bool = False,
    sweep_dir: Union[str, Path] = SWEEP_DIR,
) -> Tuple[SurrogateModel, TrainingReport, Path]:
    """
    Runs dataset generation and the three training stages, then writes the weights.

    Args:
        config (RunConfig): Plant, integrator, sweep and training settings.
        out_dir (str | Path): Directory receiving dataset, weights and report.
        quiet (bool): Skip the console report.
        sweep_dir (str | Path): Sweep cache shared with the run and sweep commands.

    Returns:
        tuple: (model, report, weights path).
    """
    master_logger = MasterLogger.get_instance()
    out_dir = init_run_dir(out_dir)
    logger = StandAloneLogger(log_path=str(out_dir / "train.log"), init=True, clear=True)

    _, points = load_or_run_sweep(config, sweep_dir)
    logger.info(f"Operating points: {points.to_dict()}")

    tc = config.training
    dataset = generate_dataset(
        config.plant,
        excitation_plan(config, points),
        tc.N,
        tc.n_samples,
        points.z_tol,
        config.integrator,
        tc.split,
        tc.workers,
        tc.seed,
    )
    unsafe, safe = dataset.class_counts()
    logger.info(f"Generated {len(dataset)} samples ({safe} safe / {unsafe} unsafe labels)")
    save_dataset(dataset, out_dir / DATASET_FILENAME)

    report = TrainingReport()
    model = fit_surrogate(dataset, tc, report)
    weights_path = out_dir / WEIGHTS_FILENAME
    save_weights(model, weights_path)
    save_yaml(out_dir / REPORT_FILENAME, report.to_dict())
    logger.info(f"Weights written to {weights_path}")
    master_logger.info(f"Training finished: val MAE {report.val_mae:.3e}, val accuracy {report.val_accuracy:.3f}")

    if not quiet:
        print_training_report(report)
    return model, report, weights_path


def print_training_report(report: TrainingReport) -> None:
    """
    Displays the split sizes, the per-stage losses and the held-out accuracy figures.
    """
    print(Fore.YELLOW + "=== Surrogate training report ===\n" + Style.RESET_ALL)

    print_section(
        "📦 Data:",
        format_table(
            ["samples", "train", "val", "test"], [(report.n_samples, report.n_train, report.n_val, report.n_test)]
        ),
    )

    body = format_table(
        ["stage", "first loss", "last loss"],
        [
            ("residual", report.residual_losses[0], report.residual_losses[-1]),
            ("classifier", report.classifier_losses[0], report.classifier_losses[-1]),
        ],
    )
    body += f"\n\nLinear stage MSE (normalised): {report.linear_train_mse:.4e}"
    body += f"   (zero model: {report.zero_model_mse:.4e})"
    if report.ridge_used:
        body += "\nRank-deficient design matrix: ridge fallback used"
    print_section("📉 Training:", body)

    print_section(
        "🎯 Held-out accuracy:",
        format_table(
            ["split", "MAE linear", "MAE full", "class. acc."],
            [
                ("val", report.val_mae_linear, report.val_mae, report.val_accuracy),
                ("test", "-", report.test_mae, report.test_accuracy),
            ],
        ),
    )

"""Synthetic data, image metrics and the taxonomy experiment harness."""

from .metrics import psnr, region_mae, ssim
from .perturb import perturb_operator
from .phantoms import insert_feature, make_dataset, make_phantom, train_test_split
from .scenario import (
    Report,
    RobustnessReport,
    Scenario,
    ScenarioError,
    aggregate_csv,
    cell_matrix,
    report_csv,
    robustness_suite,
    run_scenario,
    validate_scenario,
)

__all__ = [
    "Report",
    "RobustnessReport",
    "Scenario",
    "ScenarioError",
    "aggregate_csv",
    "cell_matrix",
    "insert_feature",
    "make_dataset",
    "make_phantom",
    "perturb_operator",
    "psnr",
    "region_mae",
    "report_csv",
    "robustness_suite",
    "run_scenario",
    "ssim",
    "train_test_split",
    "validate_scenario",
]

"""Time-ordered segmentation of 1-D series: Fisher DP, EM and CEM on a latent logistic process."""

from ._accel import BACKEND
from .bench import BenchmarkPlan, BenchmarkResult, run_benchmark, scaling_summary, segmentation_error
from .cem import CemConfig, c_step, cem_fit, compare_em_cem
from .em import EmConfig, FitReport, e_step, em_fit, initialize, m_step_regression
from .fisher import ConstantMean, Polynomial, SegmentationResult, compute_cost_matrix, fisher_segment
from .logistic import (
    LogisticParams,
    irls_fit,
    logistic_probabilities,
    ordered_partition_from_logistic,
    write_curves_csv,
)
from .model import (
    ClassRegression,
    DomainError,
    EmptyClassError,
    OrderedPartition,
    PolynomialBasis,
    RegressionMixtureParams,
    TimeSeries,
    complete_data_log_likelihood,
    mixture_log_likelihood,
)
from .simulate import LabeledSeries, SimulationSpec, simulate

__all__ = [
    "BACKEND",
    "BenchmarkPlan",
    "BenchmarkResult",
    "CemConfig",
    "ClassRegression",
    "ConstantMean",
    "DomainError",
    "EmConfig",
    "EmptyClassError",
    "FitReport",
    "LabeledSeries",
    "LogisticParams",
    "OrderedPartition",
    "Polynomial",
    "PolynomialBasis",
    "RegressionMixtureParams",
    "SegmentationResult",
    "SimulationSpec",
    "TimeSeries",
    "c_step",
    "cem_fit",
    "compare_em_cem",
    "complete_data_log_likelihood",
    "compute_cost_matrix",
    "e_step",
    "em_fit",
    "fisher_segment",
    "initialize",
    "irls_fit",
    "logistic_probabilities",
    "m_step_regression",
    "mixture_log_likelihood",
    "ordered_partition_from_logistic",
    "run_benchmark",
    "scaling_summary",
    "segmentation_error",
    "simulate",
    "write_curves_csv",
]

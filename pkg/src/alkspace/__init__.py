"""Alkane chemical-space exploration with graph-kernel active learning.

The package covers the full loop: enumerate alkane trees, compare them
with a random-walk graph kernel, select informative molecules by GP
posterior variance, generate property data from a deterministic oracle,
and fit/score property models. ``alkspace.cli`` is the command line.
"""

from .active_learning import (
    AlStallError,
    AlState,
    al_continue,
    al_init,
    al_resume,
    al_run,
    al_step,
    load_checkpoint,
    save_checkpoint,
)
from .gpr import (
    CompositeKernelConfig,
    FitError,
    GprModel,
    TemperatureProductKernel,
    composite_kernel,
    fit,
    predict_mean,
    predict_variance,
)
from .mgk import (
    KernelConvergenceError,
    KernelMatrix,
    MgkCalculator,
    MgkHyperparameters,
    kernel_matrix,
    mgk_normalized,
    mgk_raw,
)
from .molspace import (
    Atom,
    Bond,
    CanonicalSmiles,
    Descriptors,
    EnumerationLimitError,
    GraphError,
    MolecularGraph,
    SmilesError,
    descriptors,
    enumerate_alkane_smiles,
    enumerate_alkanes,
    parse_smiles,
    to_canonical_smiles,
)
from .pipeline import (
    ComparisonReport,
    ConfigError,
    EvalReport,
    Metrics,
    PipelineConfig,
    StageError,
    StageResult,
    compare_al_random,
    evaluate,
    export_plot_data,
    run_alms,
    split_test,
)
from .thermo import (
    PropertyRecord,
    QcStatus,
    ThermoSeries,
    combine_heat_capacity,
    hov_corrected,
    qc_evaluate,
    read_dataset,
    simulate_series,
    synth_critical_temperature,
    temperature_grid,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AlStallError",
    "AlState",
    "Atom",
    "Bond",
    "CanonicalSmiles",
    "ComparisonReport",
    "CompositeKernelConfig",
    "ConfigError",
    "Descriptors",
    "EnumerationLimitError",
    "EvalReport",
    "FitError",
    "GprModel",
    "GraphError",
    "KernelConvergenceError",
    "KernelMatrix",
    "Metrics",
    "MgkCalculator",
    "MgkHyperparameters",
    "MolecularGraph",
    "PipelineConfig",
    "PropertyRecord",
    "QcStatus",
    "SmilesError",
    "StageError",
    "StageResult",
    "TemperatureProductKernel",
    "ThermoSeries",
    "al_continue",
    "al_init",
    "al_resume",
    "al_run",
    "al_step",
    "combine_heat_capacity",
    "compare_al_random",
    "composite_kernel",
    "descriptors",
    "enumerate_alkane_smiles",
    "enumerate_alkanes",
    "evaluate",
    "export_plot_data",
    "fit",
    "hov_corrected",
    "kernel_matrix",
    "load_checkpoint",
    "mgk_normalized",
    "mgk_raw",
    "parse_smiles",
    "predict_mean",
    "predict_variance",
    "qc_evaluate",
    "read_dataset",
    "run_alms",
    "save_checkpoint",
    "simulate_series",
    "split_test",
    "synth_critical_temperature",
    "temperature_grid",
    "to_canonical_smiles",
    "write_dataset",
]

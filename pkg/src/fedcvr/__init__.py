"""Compressed federated optimization with client-variance reduction.

Implements the COFIG and FRECON round updates together with unbiased
compressors, client partitioning, logistic-regression objectives,
theoretical step sizes and an experiment harness that tracks uplink bits.
"""
from .algorithms import (
    CofigState,
    FreconState,
    HyperParams,
    RoundOutcome,
    ShiftInit,
    cofig_init,
    cofig_round,
    frecon_init,
    frecon_round,
)
from .compress import (
    CompressedVector,
    CompressorKind,
    CompressorSpec,
    bit_cost_model,
    compress,
    decode,
    estimate_omega_empirical,
    omega,
    parse_compressor,
)
from .harness import (
    ExperimentConfig,
    MetricsRow,
    resolve,
    run_experiment,
    run_setup,
    stopping_check,
    write_csv,
)
from ._rng import SeedStreams

__all__ = [
    "CofigState", "FreconState", "HyperParams", "RoundOutcome", "ShiftInit",
    "cofig_init", "cofig_round", "frecon_init", "frecon_round",
    "CompressedVector", "CompressorKind", "CompressorSpec", "bit_cost_model", "compress", "decode",
    "estimate_omega_empirical", "omega", "parse_compressor",
    "ExperimentConfig", "MetricsRow", "resolve", "run_experiment", "run_setup", "stopping_check", "write_csv",
    "SeedStreams",
]

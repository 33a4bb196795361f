"""Harmonic crystals in a half-space with a Dirichlet boundary layer.

Exact spectral propagators, random initial ensembles with finite-range
correlations, and numerical checks of convergence to the Gaussian
equilibrium covariance.
"""
from .covariance import CovarianceField, LimitCovariance, limit_field, limit_symbol, propagate_covariance
from .dynamics import FieldState, adjoint_evolve, evolve_full, evolve_half, propagator_hat
from .fields import CovarianceSpec, EnsembleAccumulator, NoiseLaw, gibbs_spec, sample_batch, triangular_spec
from .lattice import Box, TorusGrid, fourier, inverse_fourier
from .spectral import (
    InteractionKernel,
    SpectralTable,
    build_nn_kernel,
    build_spectral_table,
    symbol_at,
    validate_conditions,
)
from .stencil import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Box",
    "CovarianceField",
    "CovarianceSpec",
    "EnsembleAccumulator",
    "FieldState",
    "InteractionKernel",
    "LimitCovariance",
    "NoiseLaw",
    "SpectralTable",
    "TorusGrid",
    "adjoint_evolve",
    "build_nn_kernel",
    "build_spectral_table",
    "evolve_full",
    "evolve_half",
    "fourier",
    "gibbs_spec",
    "inverse_fourier",
    "limit_field",
    "limit_symbol",
    "propagate_covariance",
    "propagator_hat",
    "sample_batch",
    "symbol_at",
    "triangular_spec",
    "validate_conditions",
]

"""Rotation-invariant Bayesian PPCA and GP-LVM.

The loading (or latent) matrix is written as ``U diag(sigma)`` with ``U``
built from a chain of Householder reflections and ``sigma`` given the joint
density of the singular values of a Gaussian matrix. This removes the
rotational symmetry of the standard parameterization while keeping the same
prior on ``W W^T``. Posteriors are sampled with Hamiltonian Monte Carlo.
"""
from .baselines import classical_pca, fit_ml_ppca, project_latent_ppca
from .data import generate_synthetic, ingest_csv, standardize
from .diagnostics import ess_bulk, fix_signs, split_rhat, summarize
from .gplvm import (
    GplvmConfig,
    GplvmData,
    GplvmHouseholderPosterior,
    GplvmStandardPosterior,
    SeKernelConfig,
)
from .hmc import ChainOutput, SamplerConfig, run_chain, run_chains
from .householder import HouseholderChain, apply_chain, chain_from_stiefel
from .initialization import spectral_inits
from .ppca import PpcaData, PpcaHouseholderPosterior, PpcaStandardPosterior, PriorConfig

__version__ = "0.1.0"

__all__ = [
    "ChainOutput",
    "GplvmConfig",
    "GplvmData",
    "GplvmHouseholderPosterior",
    "GplvmStandardPosterior",
    "HouseholderChain",
    "PpcaData",
    "PpcaHouseholderPosterior",
    "PpcaStandardPosterior",
    "PriorConfig",
    "SamplerConfig",
    "SeKernelConfig",
    "apply_chain",
    "chain_from_stiefel",
    "classical_pca",
    "ess_bulk",
    "fit_ml_ppca",
    "fix_signs",
    "generate_synthetic",
    "ingest_csv",
    "project_latent_ppca",
    "run_chain",
    "run_chains",
    "spectral_inits",
    "split_rhat",
    "standardize",
    "summarize",
]

"""Particle Metropolis-Hastings with quasi-Newton proposals and SMC-ABC
likelihood and gradient estimates for state-space models."""

from .dist import RngStream, make_rng
from .models import LGSS, AlphaSV, get_model
from .pmh import GaussianTarget, ParticleTarget, ProposalSpec, run_pmh
from .smc import SmcConfig, run_smc, run_smc_abc

__all__ = [
    "AlphaSV",
    "GaussianTarget",
    "LGSS",
    "ParticleTarget",
    "ProposalSpec",
    "RngStream",
    "SmcConfig",
    "get_model",
    "make_rng",
    "run_pmh",
    "run_smc",
    "run_smc_abc",
]

__version__ = "0.1.0"

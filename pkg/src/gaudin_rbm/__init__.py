"""Variational Monte Carlo with a complex RBM for the Gaudin magnet (central-spin model)."""

from .ansatz import RbmParameters, init_random, load_checkpoint, save_checkpoint
from .dynamics import (DrivePulse, SpectrumBundle, drive_field, linear_response,
                       spectral_function, susceptibility_xy, transition_elements)
from .model import GaudinModel, build_couplings, connected_configurations
from .optimizer import EigenstateEstimate, PenaltySpec, SrConfig, optimize_eigenstate
from .oracle import full_spectrum, rbm_fidelity, sector_spectrum, time_evolve

__version__ = "0.1.0"

__all__ = [
    "DrivePulse", "EigenstateEstimate", "GaudinModel", "PenaltySpec", "RbmParameters",
    "SpectrumBundle", "SrConfig", "build_couplings", "connected_configurations", "drive_field",
    "full_spectrum", "init_random", "linear_response", "load_checkpoint", "optimize_eigenstate",
    "rbm_fidelity", "save_checkpoint", "sector_spectrum", "spectral_function",
    "susceptibility_xy", "time_evolve", "transition_elements",
]

"""Thermal intermodulation noise (TIN) and TIN backaction engine for
dispersive multimode optomechanical systems."""

from .params import CavityParams, MechanicalMode, SystemParams, DampingModel
from .spectra import FrequencyGrid, Psd, Units, NoiseBudget
from .oracle import SimConfig, FeedbackConfig, ForceTone, simulate

__version__ = "0.1.0"

__all__ = [
    "CavityParams", "MechanicalMode", "SystemParams", "DampingModel",
    "FrequencyGrid", "Psd", "Units", "NoiseBudget",
    "SimConfig", "FeedbackConfig", "ForceTone", "simulate",
]

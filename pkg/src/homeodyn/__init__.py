"""Homeostatic control of neural and endocrine oscillators."""
from .models import ChayKeizerParams, FhnParams, PbmParams, make_system
from .ode import IntegrationError, IntegratorConfig, Trajectory, integrate
from .stochastic import NoiseProcess, folded_normal_moments

__all__ = [
    "ChayKeizerParams", "FhnParams", "PbmParams", "make_system",
    "IntegrationError", "IntegratorConfig", "Trajectory", "integrate",
    "NoiseProcess", "folded_normal_moments",
]
__version__ = "0.1.0"

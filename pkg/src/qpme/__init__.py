"""Neural-network and finite-difference solvers for the quadratic porous
medium equation du/dt = (1/2) lap(u^2)."""

__version__ = "0.1.0"

from .analytic import (
    BarenblattSpec,
    DomainSpec,
    ExactBarenblatt,
    barenblatt,
    domain_halfwidth,
    free_boundary_radius,
)
from .autodiff import MlpSpec, ParamVector, load_checkpoint, save_checkpoint
from .formulations import FormulationConfig, LossBreakdown
from .training import TrainConfig, paper_preset, train

__all__ = [
    "BarenblattSpec",
    "DomainSpec",
    "ExactBarenblatt",
    "FormulationConfig",
    "LossBreakdown",
    "MlpSpec",
    "ParamVector",
    "TrainConfig",
    "barenblatt",
    "domain_halfwidth",
    "free_boundary_radius",
    "load_checkpoint",
    "paper_preset",
    "save_checkpoint",
    "train",
]

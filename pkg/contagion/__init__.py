"""
Bank-asset contagion dynamics: a deterministic engine for the lagged
second-order holdings/price/equity equations, BankRank, phase diagrams and
γ calibration from market data.
"""

__version__ = "0.1.0"

from .analysis import (
    BankRankReport,
    PhaseGrid,
    bank_rank,
    phase_diagram,
    quadrant_study,
    rewire_experiment,
    shock_each_bank,
    survival_threshold,
)
from .calibration import PricePanel, classify_regime, estimate_gamma, load_panel
from .dynamics import IntegratorConfig, Trajectory, Verdict, run, step
from .errors import (
    CalibrationError,
    ContagionError,
    IntegrationError,
    NetworkFormatError,
    ValidationError,
)
from .models import (
    AssetRecord,
    BankRecord,
    HoldingsMatrix,
    ModelParams,
    ShockSpec,
    SystemState,
    initial_state,
    single_pair,
)
from .netgen import GenSpec, generate
from .network import load_network, save_network

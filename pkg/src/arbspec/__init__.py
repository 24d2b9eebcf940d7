"""No-arbitrage diagnostics for continuous semimartingale market models."""

__version__ = "0.1.0"

from .errors import (ArbspecError, ChainViolation, InvalidPathsError, StructuralModelError,
                     ValidationError)
from .grid import TimeGrid
from .models import (AbsLocalMartingale, BlackScholes, BridgeExp, Diffusion, IntegratedRatio,
                     MVTJump, PathBundle, PowerVol, simulate)
from .characteristics import detect_divergence, empirical_nu_test, extract
from .deflators import increment_test, minimal_deflator, numeraire_change, tradability_check
from .classifier import SpectrumReport, classify, na1_numeraire_equivalence, nflvr_integral_test
from .evidence import RunSettings, gather

__all__ = [
    "ArbspecError", "ChainViolation", "InvalidPathsError", "StructuralModelError",
    "ValidationError", "TimeGrid", "AbsLocalMartingale", "BlackScholes", "BridgeExp",
    "Diffusion", "IntegratedRatio", "MVTJump", "PathBundle", "PowerVol", "simulate",
    "detect_divergence", "empirical_nu_test", "extract", "increment_test", "minimal_deflator",
    "numeraire_change", "tradability_check", "SpectrumReport", "classify",
    "na1_numeraire_equivalence", "nflvr_integral_test", "RunSettings", "gather",
]

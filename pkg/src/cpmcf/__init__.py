"""Mean curvature flow of submanifolds of complex projective space.

Modules: ambient (CP^m model), tensor (pointwise algebra), pinching (pinching
functions and their verification), immersion (gridded immersions and geometry
extraction), flow (explicit flow driver and monitors), oracles (falsification
harness and reference solutions), cli (batch front end).
"""
from .ambient import Dimensions
from .errors import (ConfigError, ContractViolation, CPMCFError, DegenerateImmersionError, DegenerateInputError,
                     SingularPointError, UnsupportedDimensionError)

__version__ = "0.1.0"

__all__ = ["Dimensions", "CPMCFError", "ConfigError", "ContractViolation", "DegenerateImmersionError",
           "DegenerateInputError", "SingularPointError", "UnsupportedDimensionError", "__version__"]

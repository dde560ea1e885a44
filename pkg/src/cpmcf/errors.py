class CPMCFError(Exception):
    """Base class for errors raised by this package."""


class DegenerateInputError(CPMCFError, ValueError):
    pass


class ContractViolation(CPMCFError, ValueError):
    pass


class DegenerateImmersionError(CPMCFError):
    def __init__(self, msg, node=None, singular_value=None):
        super().__init__(msg)
        self.node = node
        self.singular_value = singular_value


class UnsupportedDimensionError(CPMCFError, ValueError):
    pass


class SingularPointError(CPMCFError, ValueError):
    pass


class ConfigError(CPMCFError, ValueError):
    pass

"""Exception hierarchy.  Each CLI-visible failure maps to one exit code."""


class SolcorrError(Exception):
    exit_code = 1


class ConfigError(SolcorrError, ValueError):
    exit_code = 64


class ContractError(SolcorrError, ValueError):
    exit_code = 65


class RelaxationFailure(SolcorrError):
    exit_code = 2

    def __init__(self, message, last_shape_change=None, report=None):
        super().__init__(message)
        self.last_shape_change = last_shape_change
        self.report = report


class BoundStateInstability(SolcorrError):
    exit_code = 3


class DivergenceError(SolcorrError, FloatingPointError):
    exit_code = 4

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class WindowTooSmall(SolcorrError, ValueError):
    exit_code = 64


class NoSolitons(SolcorrError, ValueError):
    exit_code = 3


class OrderingAmbiguity(SolcorrError, ValueError):
    exit_code = 1

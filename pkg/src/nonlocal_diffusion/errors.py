"""Exception hierarchy shared by the numerical modules and the CLI."""


class NonlocalDiffusionError(Exception):
    """Base class for all package errors."""


class ConfigError(NonlocalDiffusionError, ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class EmptyTruncationError(NonlocalDiffusionError, ValueError):
    """The truncated domain contains no points."""


class StencilError(NonlocalDiffusionError, RuntimeError):
    """A finite-difference stencil reaches outside the node set."""


class NumericalError(NonlocalDiffusionError, RuntimeError):
    """A linear solve or iteration failed; carries optional diagnostics."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ExhaustionError(NumericalError):
    """Exhaustion did not converge within the truncation budget."""


class PropertyViolation(NonlocalDiffusionError, AssertionError):
    """A structural property (positivity, contraction, ...) was violated."""


class DivergentIntegralError(NonlocalDiffusionError, ArithmeticError):
    """A quadrature over an unbounded region failed to converge."""

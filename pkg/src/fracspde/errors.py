"""Exception hierarchy shared by the solver modules and the CLI."""


class FracSPDEError(Exception):
    """Base class for all package errors."""


class ConfigError(FracSPDEError, ValueError):
    """Invalid run configuration; carries every violated constraint."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NumericalError(FracSPDEError, ArithmeticError):
    """A numerical route failed (non-convergence, near-defective operator, blow-up)."""

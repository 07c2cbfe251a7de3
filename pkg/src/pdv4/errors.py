"""Exception hierarchy and CLI exit codes."""


class Pdv4Error(Exception):
    """Base class for all package errors."""


class InputError(Pdv4Error):
    """Invalid user input: malformed files, inconsistent configuration."""


class LoadError(InputError):
    """A data file failed validation; message carries the file/line context."""


class NumericalError(Pdv4Error):
    """A numerical procedure failed (divergence, NaN loss, singularity)."""


class SimulationDiverged(NumericalError):
    """A simulated path left the range the explicit scheme can represent."""

    def __init__(self, path_index: int, t: float, value: float,
                 detail: str = "|R1p|={value:.3g} > 1e6"):
        self.path_index = path_index
        self.t = t
        self.value = value
        super().__init__(
            f"path {path_index} diverged at t={t:.6g}: "
            + detail.format(value=value)
        )


class SingularityError(NumericalError):
    """Evaluation at a point where a formula is singular (e.g. R2=0)."""


class BandViolation(NumericalError):
    """Option price outside the static no-arbitrage band for IV inversion."""


class ExtrapolationError(Pdv4Error):
    """Surrogate queried outside its training box in strict mode."""


class BudgetExhausted(Pdv4Error):
    """Optimizer ran out of evaluations before convergence; best-so-far kept."""


# CLI exit codes (0 = success)
EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_BUDGET = 4

"""Exception types shared across the package."""


class SgnetError(Exception):
    """Base class for all package errors."""


class DomainError(SgnetError, ValueError):
    """An argument left the nonnegative domain a function is defined on."""


class MalformedFunctionError(SgnetError, ValueError):
    """A scalar function was built from inconsistent parameters."""


class OutOfRangeError(SgnetError, ValueError):
    """A value to invert lies outside the certified image of the function."""


class ClassificationError(SgnetError, ValueError):
    """A function does not belong to the comparison class an operation requires."""


class WindowMismatchError(SgnetError, ValueError):
    """Operator and sequence truncation windows are incompatible."""


class WindowTooLargeError(SgnetError, ValueError):
    """Refused an exact enumeration whose cost explodes with the window size."""


class InvalidPerturbationError(SgnetError, ValueError):
    """A perturbation gain fails the below-identity requirement."""


class DominationError(SgnetError, ValueError):
    """A virtual gain fails to dominate a concrete gain; carries the witness."""

    def __init__(self, i, j, r, gain_value, bound_value):
        self.witness = (i, j, r)
        self.gain_value = gain_value
        self.bound_value = bound_value
        super().__init__(
            f"virtual gain does not dominate entry ({i},{j}) at r={r}: "
            f"{gain_value} > {bound_value}"
        )


class CapabilityError(SgnetError, ValueError):
    """A check needs data (e.g. a gradient) the model does not provide."""


class DivergenceError(SgnetError, RuntimeError):
    """State blow-up during integration; carries the last valid time."""

    def __init__(self, t_last, norm):
        self.t_last = t_last
        self.norm = norm
        super().__init__(f"state norm {norm:.3e} exceeded blow-up threshold at t={t_last}")


class ConstructionRefusedError(SgnetError, RuntimeError):
    """A construction's precondition failed; carries the failing datum."""


class ConfigError(SgnetError, ValueError):
    """Scenario configuration problem; carries the path to the offending key."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")

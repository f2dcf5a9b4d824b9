"""Exception and warning types raised by biviso."""


class BivisoError(Exception):
    """Base class for all library errors."""


class EmptyInput(BivisoError, ValueError):
    """An operation received no observations."""


class DomainError(BivisoError, ValueError):
    """A weight function could not be evaluated, even after clamping."""


class DimensionMismatch(BivisoError, ValueError):
    """Fitted vectors and sample have incompatible lengths."""


class RangeError(BivisoError, IndexError):
    """An index range is empty or falls outside the fit."""


class GridMismatch(BivisoError, ValueError):
    """Two sets of Murphy curves were evaluated on different grids."""


class TooLarge(BivisoError, ValueError):
    """A poset exceeds the node cap for upper-set enumeration."""


class CycleError(BivisoError, ValueError):
    """The supplied order relation contains a cycle.

    Attributes
    ----------
    cycle : list of str
        Node ids along one violating cycle.
    """

    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("order relation is cyclic: " + " <= ".join(self.cycle + self.cycle[:1]))


class NonConvergenceWarning(RuntimeWarning):
    """Alternating minimization hit its iteration cap before meeting the tolerance."""

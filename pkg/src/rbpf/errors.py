"""Exception hierarchy shared by every module of the package."""


class RbpfError(Exception):
    """Base class. ``step`` is filled in by :func:`run_filter` when known."""

    step = None

    def with_step(self, step):
        self.step = step
        if self.args:
            self.args = (f"{self.args[0]} (at t={step})",) + self.args[1:]
        else:
            self.args = (f"at t={step}",)
        return self


class AllWeightsZero(RbpfError):
    """Every particle received zero weight."""


class NotNormalized(RbpfError):
    pass


class ProposalUnsupported(RbpfError):
    """Optimal proposal requested on a model without an enumerable root space."""


class ZeroPredictive(RbpfError):
    """The observation is impossible under every successor of a particle."""


class WindowTooLarge(RbpfError):
    pass


class CountMismatch(RbpfError):
    pass


class SingularInnovation(RbpfError):
    pass


class StateSpaceTooLarge(RbpfError):
    """The exact joint belief would exceed the table-size guard."""


class UnsupportedFunction(RbpfError):
    pass


class ConfigError(RbpfError, ValueError):
    pass

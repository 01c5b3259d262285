"""Exception hierarchy shared by all modules."""


class PAACError(Exception):
    """Base class for every error raised by the package."""


class ParseError(PAACError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyResult(PAACError):
    """k-core filtering removed every interaction."""


class InfeasibleSplit(PAACError):
    """The requested test/validation budget cannot be met."""


class NegativeSamplingStall(PAACError):
    def __init__(self, user):
        self.user = int(user)
        super().__init__(f"user {self.user} has interacted with every item; "
                         "no negative can be sampled")


class NonFiniteLoss(PAACError):
    def __init__(self, component, value):
        self.component = component
        self.value = value
        super().__init__(f"loss component {component!r} is not finite ({value})")


class FormatError(PAACError):
    """A checkpoint or embedding file does not match the expected layout."""


class DegenerateBandwidthWarning(UserWarning):
    """All points coincide, so the median-heuristic kernel bandwidth is zero."""

"""Exception hierarchy shared by all pipeline stages.

Perception stages distinguish a *clean* negative result (``NotFound``,
``Invalid``) from malformed input; the CLI maps the former to exit code 2.
"""


class BrickwallError(Exception):
    """Base class for all errors raised by this package."""


class FrameMismatch(BrickwallError, ValueError):
    def __init__(self, expected, got):
        super().__init__(f"frame mismatch: expected {expected!r}, got {got!r}")
        self.expected = expected
        self.got = got


class NotFound(BrickwallError):
    """A detector ran to completion but found nothing acceptable."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class Invalid(NotFound):
    """A candidate was found but failed validation."""


class Infeasible(BrickwallError):
    """A blueprint cannot be built under the construction rules."""


class Diverged(BrickwallError):
    """An iterative registration lost its correspondences."""


class EmptyAfterPreprocess(BrickwallError):
    """Scan preprocessing removed every point."""


class DegenerateQuad(BrickwallError, ValueError):
    """Image quadrilateral too degenerate for a pose estimate."""

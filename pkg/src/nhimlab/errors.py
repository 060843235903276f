"""Exception types shared across the laboratory."""


class NhimLabError(Exception):
    """Base class for all laboratory errors."""


class NoConvergence(NhimLabError):
    """An iterative solver hit its iteration budget without meeting tolerance."""


class SingularJacobian(NhimLabError):
    """A Newton step met a (numerically) singular Jacobian."""


class ToleranceNotReached(NhimLabError):
    """Adaptive quadrature could not certify the requested error."""


class IllConditioned(NhimLabError):
    """A matrix inverse was requested beyond the condition-number guard."""


class NotNormallyHyperbolic(NhimLabError):
    """The rate inequalities failed on the sample grid for the requested order."""

    def __init__(self, q, detail=""):
        self.q = q
        super().__init__(f"normal-hyperbolicity inequalities fail for q={q}" +
                         (f": {detail}" if detail else ""))


class FrameDegenerate(NhimLabError):
    """A stable/unstable frame could not be resolved at a base point."""


class LeftDomain(NhimLabError):
    """An orbit or sample left the configured working box."""


class ChartValidationFailed(NhimLabError):
    """A straightening-chart validation item exceeded its residual cap."""

    def __init__(self, item, residual, cap):
        self.item = item
        self.residual = residual
        self.cap = cap
        super().__init__(f"chart validation item {item!r}: residual {residual:.3e} > cap {cap:.3e}")


class NotTransverse(NhimLabError):
    """A disk was tangent (to tolerance) to the stable manifold at its base point."""


class FoldDetected(NhimLabError):
    """A curve failed the one-value-per-u graph test."""

    def __init__(self, u, detail=""):
        self.u = u
        super().__init__(f"fold detected near u={u:.6g}" + (f": {detail}" if detail else ""))


class GraphLost(NhimLabError):
    """The image of a graph was not a graph over the working strip."""


class BoundViolated(NhimLabError):
    """A proof-ledger inequality failed at a sample point."""

    def __init__(self, which, u, margin):
        self.which = which
        self.u = u
        self.margin = margin
        super().__init__(f"bound {which!r} violated at u={u:.6g} (margin {margin:.3e})")


class TangencySuspected(NhimLabError):
    """A splitting zero had slope below the transversality floor."""


class GapTooWide(NhimLabError):
    """Requested torus spacing exceeds the measured splitting reach."""

    def __init__(self, k, spacing, reach):
        self.k = k
        self.spacing = spacing
        self.reach = reach
        super().__init__(f"link {k}: spacing {spacing:.4g} exceeds measured reach {reach:.4g}")


class ChainBreak(NhimLabError):
    """No (ball, iterate count) pair realized a chain link within budget."""

    def __init__(self, k, detail=""):
        self.k = k
        super().__init__(f"chain link {k} could not be realized" + (f": {detail}" if detail else ""))


class PrecisionExhausted(NhimLabError):
    """The run needs more working precision than it was allowed."""

    def __init__(self, needed_bits, allowed_bits):
        self.needed_bits = needed_bits
        self.allowed_bits = allowed_bits
        super().__init__(f"needs {needed_bits} bits, allowed {allowed_bits}")


class ConfigError(NhimLabError):
    """A run configuration was malformed or inconsistent."""

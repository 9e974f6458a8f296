class TodaError(Exception):
    """Base class for every error raised by toda_cft."""


class InputError(TodaError, ValueError):
    """Malformed or out-of-range input (algebra, couplings, points, grids)."""


class ProximityError(InputError):
    """Insertion points too close to grid nodes.

    ``pairs`` holds ``(node_index, insertion_index, distance, limit)`` tuples.
    """

    def __init__(self, pairs):
        self.pairs = list(pairs)
        listed = ", ".join(
            f"(node {node}, insertion {k}: distance {dist:.3e} < {limit:.3e})"
            for node, k, dist, limit in self.pairs
        )
        super().__init__(f"Insertions too close to grid nodes: {listed}")


class SeibergRejection(TodaError):
    """The insertion data violates the Seiberg bounds; carries the verdict."""

    def __init__(self, verdict):
        self.verdict = verdict
        failures = "; ".join(verdict.failures()) or "no condition listed"
        super().__init__(f"Seiberg bounds violated: {failures}")


class NumericalError(TodaError, ArithmeticError):
    """Overflow or an internal consistency check that failed."""


class CertificateViolation(TodaError):
    """A functional handed to the Kahane comparison has a negative cross-block mixed partial."""

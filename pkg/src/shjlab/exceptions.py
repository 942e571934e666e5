"""Error types shared across the package.

Invalid arguments raise plain ValueError everywhere; the classes below
cover the two failure modes that are not caller mistakes.
"""


class CapacityError(Exception):
    """Requested ensemble or lattice would exceed the configured memory budget."""


class AccuracyError(Exception):
    """A computation finished but its internal diagnostics exceed the declared tolerance."""


class IntegrationError(Exception):
    """Time stepping produced non-finite values."""

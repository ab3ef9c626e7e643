"""Exception types shared across the pipeline."""


class SescaleError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SescaleError):
    """Invalid configuration file or command-line parameters."""


class InvalidParameter(SescaleError):
    """A parameter violates a documented precondition."""


# --- ingestion ---------------------------------------------------------


class MalformedRow(SescaleError):
    """A CSV row that cannot be parsed into the expected record."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateBrandId(SescaleError):
    def __init__(self, line: int, brand_id: str):
        super().__init__(f"line {line}: duplicate brand_id {brand_id!r}")
        self.line = line
        self.brand_id = brand_id


class UnknownDomain(SescaleError):
    def __init__(self, line: int, domain: str):
        super().__init__(f"line {line}: unknown domain {domain!r}")
        self.line = line
        self.domain = domain


class DuplicateUserId(SescaleError):
    def __init__(self, line: int, user_id: str):
        super().__init__(f"line {line}: duplicate user_id {user_id!r}")
        self.line = line
        self.user_id = user_id


class EmptyInput(SescaleError):
    """An input file produced zero usable records."""


# --- filtering ---------------------------------------------------------


class EmptyResult(SescaleError):
    """A filtering stage left nothing behind."""

    def __init__(self, side: str, message: str = ""):
        super().__init__(f"{side}: {message}" if message else side)
        self.side = side


# --- correspondence analysis -------------------------------------------


class ZeroMarginal(SescaleError):
    """A matrix row or column has no entries."""

    def __init__(self, kind: str, entity_id: str):
        super().__init__(f"{kind} {entity_id!r} has zero marginal sum")
        self.kind = kind
        self.entity_id = entity_id


class DimensionMismatch(SescaleError):
    pass


class DegenerateMatrix(SescaleError):
    """The residual matrix is numerically zero: no association structure."""


class ConvergenceFailure(SescaleError):
    """The decomposition backend failed; message carries diagnostics."""


class EmptySupport(SescaleError):
    """A supplementary point has no overlap with the fitted matrix."""


class UnknownAnchor(SescaleError):
    """An orientation anchor id is not present in the model."""


# --- statistics --------------------------------------------------------


class ZeroVariance(SescaleError):
    pass


class LengthMismatch(SescaleError):
    pass


class TooFewObservations(SescaleError):
    pass


class TooFewGroups(SescaleError):
    pass


class UnknownEntity(SescaleError):
    """An assignment references an entity without a score."""


# --- synthetic data ----------------------------------------------------


class DegenerateParams(SescaleError):
    """Generator parameters that cannot yield a usable follow graph."""


class InsufficientCoverage(SescaleError):
    """Estimates cover too small a share of the ground-truth entities."""

"""Exception types raised across the package.

Every error that callers are expected to catch derives from
:class:`SqlSentinelError`, so CLI and service layers can map the whole
family to a nonzero exit / HTTP 400 without enumerating subclasses.
"""


class SqlSentinelError(Exception):
    """Base class for all package-specific errors."""


class UnterminatedLiteral(SqlSentinelError):
    """A quoted literal or quoted identifier is missing its closing quote."""

    def __init__(self, text: str, position: int):
        self.position = position
        snippet = text[max(0, position - 20):position + 1]
        super().__init__(f"unterminated quote starting at offset {position}: ...{snippet!r}")


class DimensionMismatch(SqlSentinelError):
    """An embedding record's dimension disagrees with the expected dimension."""


class UnknownFingerprint(SqlSentinelError):
    """An embedding file contains fingerprints absent from the corpus."""

    def __init__(self, fingerprints):
        self.fingerprints = list(fingerprints)
        super().__init__(
            f"{len(self.fingerprints)} embedding(s) match no corpus query: "
            + ", ".join(self.fingerprints[:10])
        )


class MissingEmbedding(SqlSentinelError):
    """A corpus query has no embedding in the external file."""

    def __init__(self, fingerprints):
        self.fingerprints = list(fingerprints)
        super().__init__(
            f"{len(self.fingerprints)} corpus query(ies) have no embedding: "
            + ", ".join(self.fingerprints[:10])
        )


class DegenerateData(SqlSentinelError):
    """Training data carries no variance; the detector cannot be fitted."""


class DegenerateDetector(SqlSentinelError):
    """A detector's learning-period scores collapse to a single value."""


class NonFiniteLoss(SqlSentinelError):
    """Gradient-descent training produced a NaN/Inf loss."""

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"training diverged: non-finite loss at epoch {epoch}, batch {batch}")


class NoConvergence(SqlSentinelError):
    """The dual solver hit its update cap before reaching the KKT tolerance."""

    def __init__(self, violation: float, updates: int):
        self.violation = violation
        self.updates = updates
        super().__init__(
            f"solver stopped after {updates} pair updates with KKT violation {violation:.3e}"
        )


class SingleClass(SqlSentinelError):
    """Classifier training data contains fewer than two user labels."""


class UndefinedThreshold(SqlSentinelError):
    """The claimed user has no validation support, so no threshold exists."""

    def __init__(self, user: str):
        self.user = user
        super().__init__(f"no probability threshold defined for user {user!r}")


class ExhaustedTemplates(SqlSentinelError):
    """The generator cannot produce the requested number of unique queries."""


class InsufficientSource(SqlSentinelError):
    """Not enough source-role queries available for masquerade injection."""


class CorpusFormatError(SqlSentinelError):
    """A corpus file line failed to parse or misses required fields."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")

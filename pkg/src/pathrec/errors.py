"""Exception types shared across the package."""


class PathrecError(Exception):
    """Base class for all package errors."""


class SchemaViolation(PathrecError):
    """Triple endpoints do not match the relation's (head, tail) kinds."""


class UnknownEntity(PathrecError):
    """Entity reference outside the graph's populations."""


class NotAProduct(PathrecError):
    """A product entity was required."""


class IllegalAction(PathrecError):
    """Action is not a legal continuation of the current state."""


class NoActions(PathrecError):
    """Policy asked to score an empty action set."""


class EmptyCorpus(PathrecError):
    """Text statistics requested over an empty document collection."""


class EmptyCategory(PathrecError):
    """Category has no member products."""


class EmptyText(PathrecError):
    """Product has neither description nor title text."""


class MissingFeature(PathrecError):
    """No feature vector available for a product."""


class InvalidFraction(PathrecError):
    """Split fraction outside the open interval (0, 1)."""


class MalformedInput(PathrecError):
    """Too many unparseable lines in an input file."""


class InsufficientPopulation(PathrecError):
    """Not enough irrelevant products to draw the requested sample."""


class UnknownVariant(PathrecError):
    """Experiment variant name not recognized."""


class MissingArtifact(PathrecError):
    """An upstream pipeline stage has not produced its artifact yet.

    ``stage`` names the command that would create it.
    """

    def __init__(self, stage: str, detail: str = ""):
        self.stage = stage
        msg = f"missing artifact from stage '{stage}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ConfigError(PathrecError):
    """Invalid run configuration.  ``path`` is the JSON path of the key."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ArtifactError(PathrecError):
    """Artifact file is corrupt or has an incompatible format version."""

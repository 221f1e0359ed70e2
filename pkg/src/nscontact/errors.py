"""Exception types shared across the library."""


class NSContactError(Exception):
    """Base class for all library errors."""


class InvertedElementError(NSContactError):
    """Element Jacobian determinant is non-positive."""


class NonPhysicalStateError(NSContactError):
    """Constitutive evaluation requested at det F <= 0."""


class OutsideElementError(NSContactError):
    """Inverse isoparametric map diverged; the point lies outside the element.

    This is a *signal*, not a failure: contact detection interprets it as
    "no containment".
    """


class DegenerateEnrichmentError(NSContactError):
    """Enrichment reference too close to an existing node on the same face."""


class SingularSystemError(NSContactError):
    """Direct factorization failed or produced an unusable solution."""


class ConvergenceError(NSContactError):
    """Newton loop (or step-halving retries) exhausted without converging."""


class ScenarioError(NSContactError):
    """Scenario input is malformed or self-inconsistent.

    Carries ``path``, a '/'-joined trail to the offending field when known.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path

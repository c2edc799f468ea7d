"""Error kinds raised by the lab.

Construction invariants raise subclasses of InvalidParameterError (also a
ValueError); the CLI maps those and ConfigError to exit status 2. Validators
never raise for a violated property, they return a report instead.
"""


class KanLabError(Exception):
    """Base class for every error raised by the lab."""


class ConfigError(KanLabError):
    """The run configuration could not be parsed or names an unknown key."""


class InvalidParameterError(KanLabError, ValueError):
    """A construction invariant was violated."""


# torus-core
class DeterminantError(InvalidParameterError):
    """Matrix determinant is not 1."""


class WeakExpansionError(InvalidParameterError):
    """Matrix is not hyperbolic or its dominant eigenvalue is at most 5."""


class TooFewFixedPointsError(InvalidParameterError):
    """The base map has fewer than five fixed points."""


# kan-family
class DivisibilityError(InvalidParameterError):
    """Circle count k is not a positive multiple of 6."""


class SpecialPointIndexError(InvalidParameterError):
    """A special-point index does not select a base fixed point."""


class DuplicateSpecialPointError(InvalidParameterError):
    """Two of the five special points coincide."""


class BumpRadiusError(InvalidParameterError):
    """rho_b is not below half the minimum special-point distance."""


class GainCeilingError(InvalidParameterError):
    """g_plus exceeds nu/2."""


class ProfileParameterError(InvalidParameterError):
    """A fiber profile rate or amplitude is out of range."""


class PropertyViolationError(InvalidParameterError):
    """A map failed its construction-time property validation."""


# surgery
class EpsilonError(InvalidParameterError):
    """eps is not small against the circle spacing and special-point distances."""


class NotASourceError(InvalidParameterError):
    """(1 + delta_DA) * lambda_s does not exceed 1."""


class DiffeoMarginError(InvalidParameterError):
    """The DA deformation would not stay invertible with the required margin."""


class SupportOverlapError(InvalidParameterError):
    """Surgery supports overlap each other or the profile bumps."""


class ZetaError(InvalidParameterError):
    """zeta is out of range, or no candidate radius meets the outside bound."""


class PushStrengthError(InvalidParameterError):
    """Push parameters are out of range or the push is not invertible."""


class StageError(InvalidParameterError):
    """The map stage lacks the parameters it needs, or an operation got the wrong stage."""


# dynamics-engine / basin-lab
class ClassifyParamsError(InvalidParameterError):
    """Basin classification parameters are out of range."""


class ProbeParameterError(InvalidParameterError):
    """A probe or estimator was given an unusable budget."""


class SliceSpecError(InvalidParameterError):
    """A sweep slice is malformed."""


class ScaleNestingError(InvalidParameterError):
    """Intermingling scales are not positive or a scale does not divide the next."""


class NonFiniteCoordinateError(KanLabError, ValueError):
    """A coordinate is NaN or infinite."""


class ChartRangeError(KanLabError, ValueError):
    """A point lies outside the chart radius."""


class LyapunovOverflowError(KanLabError, ArithmeticError):
    """The tangent cocycle overflowed before re-orthonormalization."""


class UnstableDiskError(KanLabError):
    """An unstable curve did not reach the target length within its budget."""


class EmptyGridError(KanLabError, ValueError):
    """A statistics request was made on an empty label grid."""


class PaletteError(KanLabError, KeyError):
    """The palette lacks a colour for some label 0..k or gives two labels the same colour."""


class GoldenMissingError(KanLabError, FileNotFoundError):
    """A bit-exact check was requested against a golden file that does not exist."""

"""Exception types shared across the package.

Everything raised on purpose derives from :class:`PencilGuardError` so
callers (and the command line driver) can distinguish anticipated failures
from genuine bugs.
"""


class PencilGuardError(Exception):
    """Base class for all anticipated errors."""


# --- linear algebra core -------------------------------------------------

class DimensionMismatch(PencilGuardError):
    """Operands are not square or their shapes disagree."""


class NonFiniteInput(PencilGuardError):
    """An input matrix or signal contains NaN or Inf."""


class ConvergenceFailure(PencilGuardError):
    """The QZ iteration ran out of sweeps.

    ``block_size`` records the order of the trailing block that had not
    deflated when the sweep budget was exhausted.
    """

    def __init__(self, message, block_size=0):
        super().__init__(message)
        self.block_size = block_size


class OrderTooLarge(PencilGuardError):
    """A brute-force check was requested above its cost guard."""


class SingularM2(PencilGuardError):
    """The right-hand matrix of the pencil is numerically singular."""


# --- audio / spectrogram -------------------------------------------------

class UnsupportedEncoding(PencilGuardError):
    """WAV payload is neither 16-bit PCM nor 32-bit float."""


class CorruptHeader(PencilGuardError):
    """File does not parse as the advertised container format."""


class LengthMismatch(PencilGuardError):
    """Signal lengths disagree where equal lengths are required."""


class ScaleOutOfRange(PencilGuardError):
    """Pitch-shift factor outside the supported [0.5, 2.0] band."""


class ClipTooShort(PencilGuardError):
    """Too few samples to form at least two analysis frames."""


class DegenerateSource(PencilGuardError):
    """Resampling source has fewer than two rows or columns."""


# --- models / attacks ----------------------------------------------------

class DivergedTraining(PencilGuardError):
    """Loss became non-finite during gradient descent."""


class NoConvergence(PencilGuardError):
    """An iterative solver hit its iteration cap before its tolerance."""


class GradientUnavailable(PencilGuardError):
    """A gradient-based attack was pointed at a model without gradients."""


class DegenerateFlip(PencilGuardError):
    """A label-flip attack would leave some class without samples."""


# --- detector ------------------------------------------------------------

class InsufficientBatch(PencilGuardError):
    """Not enough samples in a class batch to form index pairs."""


class EmptyTrainingSet(PencilGuardError):
    """Detector training requires at least one sample per side."""


class ConfigMismatch(PencilGuardError):
    """Feature does not match the configuration the model was fit with."""


class SingleClassTestSet(PencilGuardError):
    """AUC is undefined when only one label is present."""


# --- harness -------------------------------------------------------------

class ValidationError(PencilGuardError):
    """Configuration file failed validation."""


class MissingArtifact(PencilGuardError):
    """A pipeline stage depends on an artifact that does not exist yet."""

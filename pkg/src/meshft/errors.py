"""Exception hierarchy shared by every meshft module."""


class MeshFTError(Exception):
    """Base class for all meshft failures."""


class DimensionMismatch(MeshFTError, ValueError):
    pass


class ChainViolation(MeshFTError):
    """D_{k+1} D_k is not identically zero."""


class BadReference(MeshFTError, IndexError):
    pass


class DegenerateCell(MeshFTError, ValueError):
    pass


class NotAPermutation(MeshFTError, ValueError):
    pass


class BadDimension(MeshFTError, ValueError):
    pass


class MeshingFailure(MeshFTError):
    pass


class DegenerateTriangle(MeshFTError, ValueError):
    pass


class NonPositiveMass(MeshFTError, ValueError):
    pass


class NonFiniteState(MeshFTError, FloatingPointError):
    def __init__(self, message, frame=None):
        super().__init__(message)
        self.frame = frame


class NoConvergence(MeshFTError, RuntimeWarning):
    """Raised as a warning: the best estimate is still returned."""


class ShapeMismatch(MeshFTError, ValueError):
    pass


class NonFiniteGradient(MeshFTError, FloatingPointError):
    pass


class Diverged(MeshFTError, FloatingPointError):
    pass


class NonCommensurate(MeshFTError, ValueError):
    pass


class ZeroModeAmplitude(MeshFTError, ValueError):
    pass


class TooShort(MeshFTError, ValueError):
    pass


class ZeroEnergy(MeshFTError, ValueError):
    pass


class ZeroField(MeshFTError, ValueError):
    pass


class SingularFit(MeshFTError, ValueError):
    pass


class UnknownVariant(MeshFTError, KeyError):
    pass


class ConfigError(MeshFTError, ValueError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class CheckpointMismatch(MeshFTError, ValueError):
    pass

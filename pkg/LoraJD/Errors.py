class LoraJDError(Exception):
    """Base class for every domain failure raised by LoraJD"""


class BundleError(LoraJDError, ValueError):
    """Adapter or activation bundle is missing, malformed, or holds bad payloads"""


class ArtifactError(LoraJDError, ValueError):
    """Compressed artifact has a bad magic, an unsupported version, or a truncated payload"""


class ShapeMismatchError(LoraJDError, ValueError):
    """Matrices or tensors do not have compatible shapes"""


class NotOrthonormalError(LoraJDError, ValueError):
    """Shared basis expected to have orthonormal columns does not"""


class UnknownAdapterError(LoraJDError, KeyError):
    """Adapter id cannot be resolved"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ''


class SolverError(LoraJDError, RuntimeError):
    """Linear solve failed even after regularization"""

class AdmmInvertError(Exception):
    """Base class for all errors raised by this package"""


class ConfigError(AdmmInvertError):
    """Invalid, missing or unparseable configuration"""


class MeshError(AdmmInvertError):
    """Invalid mesh topology or mesh file"""


class AssemblyError(MeshError):
    """Finite element assembly failure (degenerate element, bad coefficient, unknown marker)"""


class FieldError(AdmmInvertError):
    """Field with wrong length, non-finite values or on a different mesh"""


class SolverError(AdmmInvertError):
    """Base class for numerical failures"""


class SparseSolveError(SolverError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ForwardModelError(SolverError):
    """Forward model evaluated outside its admissible set"""


class AdmmError(SolverError):
    """Consensus iteration cannot continue"""

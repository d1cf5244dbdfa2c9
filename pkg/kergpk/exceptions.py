"""
kergpk - Exception hierarchy
Every library failure raises one of these; the CLI maps them to exit codes.
"""

from typing import Optional


class KerGPKError(Exception):
    """Base class for all kergpk errors"""


class DataValidationError(KerGPKError, ValueError):
    """Input data has the wrong shape or non-finite entries"""


class ParseError(DataValidationError):
    """A data file could not be parsed"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


class ParameterError(KerGPKError, ValueError):
    """A parameter is outside its valid range"""


class SizeError(KerGPKError, ValueError):
    """Too few observations for the requested operation"""


class DegenerateDataError(KerGPKError):
    """All pairwise distances are zero, so no bandwidth can be chosen"""


class DegeneracyError(KerGPKError):
    """
    The permutation covariance of (alpha, beta) is singular or a
    standardizing variance is zero. `case` names the kernel corner case
    (C1 or C2) when it is known.
    """

    def __init__(self, message: str, case: Optional[str] = None):
        self.case = case
        prefix = f"[{case}] " if case else ""
        super().__init__(f"{prefix}{message}")


class NumericalError(KerGPKError):
    """A variance came out clearly negative"""


class EnumerationCapError(KerGPKError):
    """Exhaustive enumeration would exceed the configured cap"""


class UnknownPresetError(KerGPKError, KeyError):
    """Requested simulation preset does not exist"""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown preset"

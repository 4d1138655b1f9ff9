"""
Exception hierarchy for duqbench
"""
from typing import Optional


class DuqbenchError(Exception):
    """Base class for all duqbench errors"""


class NotFoundError(DuqbenchError, KeyError):
    """Unknown function, method, dataset or job"""

    def __str__(self):
        # KeyError quotes its message; keep it readable
        return str(self.args[0]) if self.args else ""


class DomainError(DuqbenchError, ValueError):
    """Input outside the operation's domain"""


class ConflictError(DuqbenchError):
    """Name already registered"""


class ConfigError(DuqbenchError):
    """Invalid study configuration"""


class SchemaError(DuqbenchError):
    """Result tables with incompatible columns"""


class IngestionError(DuqbenchError):
    """Dataset CSV could not be ingested"""


class AnalysisError(DuqbenchError):
    """Result table unsuitable for the requested analysis"""


class StubFunctionError(DuqbenchError, NotImplementedError):
    """Registered name without an evaluator"""


class EmulatorFailure(DuqbenchError):
    """
    An emulator broke during fit or prediction.
    The harness answers this with the fallback model.
    """

    stage = "fit"

    def __init__(self, reason: str, diagnostics: Optional[str] = None):
        super().__init__(reason)
        self.reason = reason
        self.diagnostics = diagnostics or ""


class FitFailure(EmulatorFailure):
    stage = "fit"


class PredictFailure(EmulatorFailure):
    stage = "pred"

"""Exception hierarchy shared by the loader, the model builders and the study runner."""

from typing import List, Optional


class CaesBenchError(Exception):
    """Base class for every error raised by the scheduling engine"""


class CaseFormatError(CaesBenchError):
    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, field: Optional[str] = None):
        self.path = path
        self.line = line
        self.field = field
        location = []
        if path:
            location.append(str(path))
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        prefix = f"{', '.join(location)}: " if location else ''
        super().__init__(prefix + message)


class CaseValidationError(CaesBenchError):
    def __init__(self, diagnostics: List):
        self.diagnostics = list(diagnostics)
        lines = '; '.join(str(d) for d in self.diagnostics[:10])
        more = f" (+{len(self.diagnostics) - 10} more)" if len(self.diagnostics) > 10 else ''
        super().__init__(f"{len(self.diagnostics)} invariant violation(s): {lines}{more}")


class DanglingReferenceError(CaesBenchError):
    pass


class ScenarioError(CaesBenchError):
    pass


class ModelBuildError(CaesBenchError):
    pass


class BackendUnavailableError(CaesBenchError):
    pass


class SolveError(CaesBenchError):
    pass


class DecodeError(CaesBenchError):
    pass


class AuditError(CaesBenchError):
    pass

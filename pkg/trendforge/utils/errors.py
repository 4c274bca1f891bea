from typing import Optional


class TrendForgeError(Exception):
    """Error base del proyecto; cada subclase define su codigo de salida"""

    exit_code = 1


# ==================== CONFIGURACION ====================

class ConfigError(TrendForgeError):
    """Violacion del esquema de configuracion"""

    exit_code = 2

    def __init__(self, message: str, field_path: Optional[str] = None):
        self.field_path = field_path
        if field_path:
            message = f"{field_path}: {message}"
        super().__init__(message)


class ParameterError(TrendForgeError, ValueError):
    """Parametro invalido para una operacion"""

    exit_code = 2


# ==================== DATOS ====================

class DataError(TrendForgeError):
    exit_code = 3


class EmptyInputError(DataError):
    pass


class ParseError(DataError):

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"fila {row}: {message}"
        super().__init__(message)


class CandleValidationError(ParseError):
    pass


class InsufficientDataError(DataError):

    def __init__(self, column: str, required: int, available: int, message: Optional[str] = None):
        self.column = column
        self.required = required
        self.available = available
        super().__init__(
            message or f"{column} requiere {required:,} barras, disponibles {available:,}"
        )


class ZeroVarianceError(DataError):

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"Columna {column} con varianza cero en entrenamiento")


class FetchError(DataError):
    pass


class MissingArtifactError(DataError):

    def __init__(self, path, command: str):
        self.path = path
        self.command = command
        super().__init__(f"Artefacto no encontrado: {path} (ejecutar primero '{command}')")


class HashMismatchError(DataError):
    pass


# ==================== ENTRENAMIENTO ====================

class TrainingError(TrendForgeError):
    exit_code = 4


class SingleClassError(TrainingError):
    pass


class SchemaVersionError(TrainingError):
    pass


class GridSearchError(TrainingError):
    pass

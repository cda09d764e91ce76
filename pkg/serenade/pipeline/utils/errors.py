from typing import Any, Optional


class SerenadeError(Exception):
    """Exceção base do toolkit, com código de saída para a CLI."""

    exit_code: int = 1
    code: str = "serenade_error"

    def __init__(self, message: str, exit_code: Optional[int] = None, details: Any = None):
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code
        self.details = details
        super().__init__(self.message)


class InvalidInputError(SerenadeError):
    """Parâmetros ou dados de entrada fora do domínio aceito."""

    exit_code = 2
    code = "invalid_input"


class ShapeError(InvalidInputError, ValueError):
    """Formas ou contagens de quadros incompatíveis."""

    code = "shape_mismatch"


class MissingFileError(SerenadeError):
    """Arquivo de entrada inexistente."""

    exit_code = 3
    code = "missing_file"


class FormatError(SerenadeError):
    """Arquivo binário ou manifesto malformado."""

    exit_code = 3
    code = "bad_format"


class NumericError(SerenadeError):
    """Falha numérica (perda ou gradiente não finito)."""

    exit_code = 4
    code = "numeric_failure"

"""
errors.py
Errores del sistema ARCO.
Cada clase lleva el código de salida que usa la línea de comandos:
uso/configuración (2), datos (3), dominio (4), entrada/salida (5).
"""

from typing import Optional

# Valor centinela para estadísticas indefinidas (denominador cero, varianza nula)
UNDEFINED = None


class ArcoError(Exception):
    """Error base del sistema."""

    exit_code = 1


class ConfigError(ArcoError):
    """Configuración inválida, claves desconocidas o inconsistentes."""

    exit_code = 2


class DataError(ArcoError):
    """Datos de entrada mal formados o inconsistentes con la geometría."""

    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        if line is not None:
            ubicacion = f"línea {line}" if column is None else f"línea {line}, columna {column}"
            message = f"{message} ({ubicacion})"
        super().__init__(message)


class DomainError(ArcoError, ValueError):
    """Parámetros fuera del dominio de una fórmula (p. ej. alpha_c = 0)."""

    exit_code = 4


class OutputError(ArcoError):
    """No se pudo escribir un archivo de salida."""

    exit_code = 5

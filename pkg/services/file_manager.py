"""
file_manager.py
Servicios de lectura y escritura de archivos del sistema ARCO.

Formatos (todos de texto, orientados a líneas):
- <replica>.trace.csv : cabecera "# clave = valor" (eco de la configuración,
  semilla, réplica) y una tabla con un registro por ciclo.
- <replica>.grids.txt : bloques "# mask name=...", "# image cycle=i tag=t"
  con filas 0/1 (fila 0 primero) y "# moves cycle=i count=k" con líneas
  "sc sr dc dr ok".
- plan.csv            : un trazo por fila con la cabecera del plan.
- trajectory_<k>.csv  : muestras t_ms, x_um, y_um, depth.
- grillas de ocupación externas: filas 0/1, comentarios con "#".
"""

import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import polars as pl

from services.analysis_service import ImageSequence
from services.planner_service import KinematicParams, MovePlan, TweezerTrajectory, classify_stroke, plan_duration
from services.geometry_service import LatticeGeometry, site_record
from services.simulator_service import RunTrace, occupancy_checksum
from utils.constants import FLOAT_PRECISION, MISSING_VALUE
from utils.errors import DataError, OutputError

TRACE_COLUMNS = (
    "cycle",
    "n_loaded",
    "n_moves_attempted",
    "n_moves_succeeded",
    "n_collateral_losses",
    "n_shelving_losses",
    "n_vacuum_losses",
    "n_imaging_losses",
    "true_stored_before",
    "true_stored_after",
    "stored_count_after",
    "image1_checksum",
    "image2_checksum",
)
MASK_NAMES = ("target", "loading", "tweezer")


def ensure_directory(path: str) -> str:
    """Crea el directorio de salida si no existe."""
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OutputError(f"No se pudo crear el directorio de salida '{path}': {e}") from e
    if not os.access(path, os.W_OK):
        raise OutputError(f"El directorio de salida '{path}' no tiene permisos de escritura")
    return path


def _write_text(path: str, contenido: str) -> str:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(contenido)
    except OSError as e:
        raise OutputError(f"No se pudo escribir '{path}': {e}") from e
    return path


def format_value(value) -> str:
    if value is None:
        return MISSING_VALUE
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.{FLOAT_PRECISION}f}"
    return str(value)


def table_to_text(df: pl.DataFrame) -> str:
    return df.write_csv(float_precision=FLOAT_PRECISION, null_value=MISSING_VALUE)


def write_table(df: pl.DataFrame, path: str, header: Optional[Dict[str, object]] = None) -> str:
    """Escribe una tabla delimitada con precisión fija y cabecera opcional de comentarios."""
    lineas = [f"# {clave} = {format_value(valor)}\n" for clave, valor in (header or {}).items()]
    return _write_text(path, "".join(lineas) + table_to_text(df))


def read_table(path: str, **opciones) -> Tuple[Dict[str, str], pl.DataFrame]:
    """Lee una tabla escrita por write_table; devuelve (cabecera, tabla)."""
    if not os.path.exists(path):
        raise DataError(f"No existe el archivo '{path}'")
    cabecera = {}
    with open(path, encoding="utf-8") as fh:
        for linea in fh:
            if not linea.startswith("#"):
                break
            clave, _, valor = linea[1:].partition("=")
            if _:
                cabecera[clave.strip()] = valor.strip()
    try:
        df = pl.read_csv(path, comment_prefix="#", null_values=[MISSING_VALUE], **opciones)
    except (pl.exceptions.ComputeError, pl.exceptions.NoDataError) as e:
        raise DataError(f"Tabla ilegible '{path}': {e}") from e
    return cabecera, df


# ----------------------------------------------------------------------
# Trazas
# ----------------------------------------------------------------------
def replica_stem(replica: int) -> str:
    return f"replica_{replica:03d}"


def trace_table(trace: RunTrace) -> pl.DataFrame:
    filas = {columna: [] for columna in TRACE_COLUMNS}
    for r in trace.records:
        valores = (
            r.cycle_index, r.n_loaded, r.n_moves_attempted, r.n_moves_succeeded,
            r.n_collateral_losses, r.n_shelving_losses, r.n_vacuum_losses, r.n_imaging_losses,
            r.true_stored_before, r.true_stored_after, r.stored_count_after,
            r.image1.checksum(), r.image2.checksum(),
        )
        for columna, valor in zip(TRACE_COLUMNS, valores):
            filas[columna].append(valor)
    return pl.DataFrame(filas)


def write_trace(trace: RunTrace, out_dir: str) -> str:
    ensure_directory(out_dir)
    cabecera = {"format": "arco-trace-1", "seed": trace.seed, "replica": trace.replica}
    cabecera.update(trace.config)
    ruta = os.path.join(out_dir, f"{replica_stem(trace.replica)}.trace.csv")
    return write_table(trace_table(trace), ruta, cabecera)


def read_trace(path: str) -> Tuple[Dict[str, str], pl.DataFrame]:
    # todo como texto: las sumas xxh64 pueden tener solo dígitos
    cabecera, df = read_table(path, infer_schema=False)
    faltantes = [c for c in TRACE_COLUMNS if c not in df.columns]
    if faltantes:
        raise DataError(f"La traza '{path}' no tiene las columnas {faltantes}")
    enteras = [c for c in TRACE_COLUMNS if not c.endswith("_checksum")]
    try:
        df = df.with_columns(pl.col(c).cast(pl.Int64) for c in enteras)
    except pl.exceptions.InvalidOperationError as e:
        raise DataError(f"La traza '{path}' tiene conteos no enteros: {e}") from e
    return cabecera, df


# ----------------------------------------------------------------------
# Grillas 0/1
# ----------------------------------------------------------------------
def grid_lines(occupied: np.ndarray) -> List[str]:
    return ["".join("1" if v else "0" for v in fila) for fila in np.asarray(occupied, dtype=bool)]


def write_grids(trace: RunTrace, out_dir: str) -> str:
    """Vuelca máscaras, imágenes y movimientos de una traza."""
    ensure_directory(out_dir)
    lineas = []
    for nombre in MASK_NAMES:
        mask = trace.masks[nombre]
        lineas.append(f"# mask name={nombre} rows={mask.shape[0]} cols={mask.shape[1]}")
        lineas.extend(grid_lines(mask))
    for r in trace.records:
        for imagen in (r.image1, r.image2):
            filas, columnas = imagen.occupied.shape
            lineas.append(f"# image cycle={r.cycle_index} tag={imagen.image_tag} rows={filas} cols={columnas}")
            lineas.extend(grid_lines(imagen.occupied))
        lineas.append(f"# moves cycle={r.cycle_index} count={len(r.moves)}")
        lineas.extend(
            f"{m.source[0]} {m.source[1]} {m.destination[0]} {m.destination[1]} {int(m.succeeded)}"
            for m in r.moves
        )
    ruta = os.path.join(out_dir, f"{replica_stem(trace.replica)}.grids.txt")
    return _write_text(ruta, "\n".join(lineas) + "\n")


def _parse_directive(linea: str, numero: int) -> Tuple[str, Dict[str, str]]:
    partes = linea[1:].split()
    if not partes:
        raise DataError("Directiva vacía", line=numero, column=1)
    atributos = {}
    for parte in partes[1:]:
        clave, igual, valor = parte.partition("=")
        if not igual:
            raise DataError(f"Atributo sin '=': '{parte}'", line=numero, column=linea.find(parte) + 1)
        atributos[clave] = valor
    return partes[0], atributos


def _int_attr(atributos: Dict[str, str], clave: str, numero: int) -> int:
    if clave not in atributos:
        raise DataError(f"Falta el atributo '{clave}'", line=numero)
    try:
        return int(atributos[clave])
    except ValueError as e:
        raise DataError(f"El atributo '{clave}' debe ser entero", line=numero) from e


def parse_grid_rows(lineas: Sequence[Tuple[int, str]], n_cols: Optional[int] = None) -> np.ndarray:
    """Convierte filas de '0'/'1' en una matriz booleana; reporta línea y columna del primer error."""
    filas = []
    for numero, texto in lineas:
        if n_cols is not None and len(texto) != n_cols:
            raise DataError(
                f"La fila tiene {len(texto)} columnas; se esperaban {n_cols}",
                line=numero, column=min(len(texto), n_cols) + 1,
            )
        for k, caracter in enumerate(texto):
            if caracter not in "01":
                raise DataError(f"Carácter inválido '{caracter}' en la grilla", line=numero, column=k + 1)
        filas.append([c == "1" for c in texto])
        n_cols = len(texto)
    if not filas:
        raise DataError("La grilla está vacía")
    return np.array(filas, dtype=bool)


def _read_lines(path: str) -> List[str]:
    if not os.path.exists(path):
        raise DataError(f"No existe el archivo '{path}'")
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def read_grids(path: str) -> ImageSequence:
    """Lee un archivo de grillas y construye la ImageSequence correspondiente."""
    lineas = _read_lines(path)
    mascaras: Dict[str, np.ndarray] = {}
    imagenes: List[np.ndarray] = []
    etiquetas: List[int] = []
    movimientos: List[tuple] = []

    k = 0
    while k < len(lineas):
        numero = k + 1
        linea = lineas[k].strip()
        k += 1
        if not linea:
            continue
        if not linea.startswith("#"):
            raise DataError("Se esperaba una directiva '# mask', '# image' o '# moves'", line=numero, column=1)
        tipo, atributos = _parse_directive(linea, numero)

        if tipo in ("mask", "image"):
            filas = _int_attr(atributos, "rows", numero)
            columnas = _int_attr(atributos, "cols", numero)
            bloque = [(k + 1 + j, lineas[k + j].strip()) for j in range(min(filas, len(lineas) - k))]
            if len(bloque) < filas:
                raise DataError(f"Bloque '{tipo}' incompleto: faltan filas", line=len(lineas))
            grilla = parse_grid_rows(bloque, columnas)
            k += filas
            if tipo == "mask":
                mascaras[atributos.get("name", "")] = grilla
            else:
                imagenes.append(grilla)
                etiquetas.append(_int_attr(atributos, "tag", numero))
        elif tipo == "moves":
            cuenta = _int_attr(atributos, "count", numero)
            ciclo = []
            for j in range(cuenta):
                if k >= len(lineas):
                    raise DataError("Lista de movimientos incompleta", line=len(lineas))
                campos = lineas[k].split()
                if len(campos) != 5:
                    raise DataError("Un movimiento requiere 'sc sr dc dr ok'", line=k + 1, column=1)
                try:
                    sc, sr, dc, dr, ok = (int(c) for c in campos)
                except ValueError as e:
                    raise DataError("Los campos del movimiento deben ser enteros", line=k + 1) from e
                ciclo.append(((sc, sr), (dc, dr), bool(ok)))
                k += 1
            movimientos.append(tuple(ciclo))
        else:
            raise DataError(f"Directiva desconocida '{tipo}'", line=numero, column=3)

    faltantes = [n for n in MASK_NAMES if n not in mascaras]
    if faltantes:
        raise DataError(f"El archivo de grillas no define las máscaras {faltantes}")
    return ImageSequence(
        images=tuple(imagenes),
        target_mask=mascaras["target"],
        loading_mask=mascaras["loading"],
        tweezer_mask=mascaras["tweezer"],
        tags=tuple(etiquetas),
        moves=tuple(movimientos) if movimientos else (),
    )


def grids_path_for(path: str) -> str:
    """Archivo de grillas asociado a una traza (o la misma ruta si ya es de grillas)."""
    if path.endswith(".grids.txt"):
        return path
    if path.endswith(".trace.csv"):
        return path[: -len(".trace.csv")] + ".grids.txt"
    raise DataError(f"No se reconoce el tipo de archivo '{path}' (.trace.csv o .grids.txt)")


def read_occupancy_grid(path: str, geometry: LatticeGeometry) -> np.ndarray:
    """Lee una grilla de ocupación externa (filas 0/1, fila 0 primero) y la valida contra la red."""
    lineas = [
        (k + 1, linea.strip())
        for k, linea in enumerate(_read_lines(path))
        if linea.strip() and not linea.lstrip().startswith("#")
    ]
    if len(lineas) != geometry.n_rows:
        raise DataError(
            f"La grilla '{path}' tiene {len(lineas)} filas; la red tiene {geometry.n_rows}",
            line=lineas[-1][0] if lineas else None,
        )
    return parse_grid_rows(lineas, geometry.n_cols)


def write_occupancy_grid(occupied: np.ndarray, path: str) -> str:
    ocupacion = np.asarray(occupied, dtype=bool)
    cabecera = f"# occupancy rows={ocupacion.shape[0]} cols={ocupacion.shape[1]} checksum={occupancy_checksum(ocupacion)}"
    return _write_text(path, "\n".join([cabecera] + grid_lines(ocupacion)) + "\n")


# ----------------------------------------------------------------------
# Planes y trayectorias
# ----------------------------------------------------------------------
def plan_table(plan: MovePlan, geometry: LatticeGeometry) -> pl.DataFrame:
    filas = []
    for move in plan.moves:
        for k, (a, b) in enumerate(move.strokes):
            filas.append({
                "rank": move.order_rank,
                "source_col": move.source[0],
                "source_row": move.source[1],
                "dest_col": move.destination[0],
                "dest_row": move.destination[1],
                "stroke": k,
                "x0": float(a[0]),
                "y0": float(a[1]),
                "x1": float(b[0]),
                "y1": float(b[1]),
                "mode": classify_stroke(geometry, (a, b)),
            })
    esquema = {
        "rank": pl.Int64, "source_col": pl.Int64, "source_row": pl.Int64,
        "dest_col": pl.Int64, "dest_row": pl.Int64, "stroke": pl.Int64,
        "x0": pl.Float64, "y0": pl.Float64, "x1": pl.Float64, "y1": pl.Float64, "mode": pl.Utf8,
    }
    return pl.DataFrame(filas, schema=esquema)


def write_plan(plan: MovePlan, geometry: LatticeGeometry, kinematics: KinematicParams, path: str) -> str:
    cabecera = {
        "format": "arco-plan-1",
        "moves": len(plan.moves),
        "violations": len(plan.violations),
        "unpaired": len(plan.unpaired),
        "d_min": plan.d_min,
        "duration_ms": plan_duration(plan, kinematics),
    }
    return write_table(plan_table(plan, geometry), path, cabecera)


def violations_table(plan: MovePlan, geometry: LatticeGeometry) -> pl.DataFrame:
    """Una fila por violación con el sitio en índices y en μm."""
    sitios = [site_record(geometry, *v.site) for v in plan.violations]
    return pl.DataFrame(
        {
            "rank": [v.move_rank for v in plan.violations],
            "col": [s.col for s in sitios],
            "row": [s.row for s in sitios],
            "x_um": [s.point[0] for s in sitios],
            "y_um": [s.point[1] for s in sitios],
            "distance": [v.distance for v in plan.violations],
        },
        schema={
            "rank": pl.Int64, "col": pl.Int64, "row": pl.Int64,
            "x_um": pl.Float64, "y_um": pl.Float64, "distance": pl.Float64,
        },
    )


def write_trajectory(trajectory: TweezerTrajectory, path: str) -> str:
    df = pl.DataFrame({
        "t_ms": trajectory.times,
        "x_um": trajectory.positions[:, 0],
        "y_um": trajectory.positions[:, 1],
        "depth": trajectory.depths,
    })
    return write_table(df, path, {"total_duration_ms": trajectory.total_duration})

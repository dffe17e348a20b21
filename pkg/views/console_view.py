"""
console_view.py
Reportes de consola de la línea de comandos ARCO.
Todas las salidas pasan por click.echo; los errores van a stderr.
"""

from typing import Dict, Optional

import click
import polars as pl

from utils.constants import FLOAT_PRECISION, MISSING_VALUE, REFERENCE_PEARSON


def _fmt(valor, decimales: int = FLOAT_PRECISION) -> str:
    if valor is None:
        return MISSING_VALUE
    if isinstance(valor, float):
        return f"{valor:.{decimales}f}"
    return str(valor)


def banner(titulo: str, ancho: int = 60) -> None:
    click.echo("=" * ancho)
    click.echo(titulo)
    click.echo("=" * ancho)


def show_table(df: pl.DataFrame, max_rows: Optional[int] = None) -> None:
    """Imprime una tabla con columnas alineadas y precisión fija."""
    filas = df.rows() if max_rows is None else df.head(max_rows).rows()
    celdas = [[_fmt(v) for v in fila] for fila in filas]
    anchos = [
        max([len(c)] + [len(fila[k]) for fila in celdas]) for k, c in enumerate(df.columns)
    ]
    click.echo("  ".join(c.rjust(a) for c, a in zip(df.columns, anchos)))
    for fila in celdas:
        click.echo("  ".join(v.rjust(a) for v, a in zip(fila, anchos)))
    if max_rows is not None and df.height > max_rows:
        click.echo(f"   ... ({df.height - max_rows} filas más)")


def show_prediction(resumen: Dict[str, float], tabla: pl.DataFrame) -> None:
    banner("📈 PREDICCIÓN DE ESTADO ESTACIONARIO")
    click.echo(f"🎯 Factor de amplificación β: {_fmt(resumen['beta'])}")
    click.echo(f"📊 N_∞: {_fmt(resumen['n_inf'])}")
    click.echo(f"📥 N_L,eff: {_fmt(resumen['n_l_eff'])}")
    click.echo(f"🔬 α_c emergente de los canales (sin colaterales): {_fmt(resumen['alpha_c_channels'])}")
    click.echo(f"🔦 Pinza a {_fmt(resumen['tweezer_depth_mK'], 3)} mK: vida media por fotoionización {_fmt(resumen['ionization_lifetime_s'], 3)} s")
    click.echo(f"〰️ Modulación de la red sobre la ruta de referencia: {_fmt(resumen['lattice_modulation_uK'], 2)} μK")
    click.echo("\n📋 Acumulación determinista:")
    show_table(tabla)


def show_simulation(resumen: Dict[str, object]) -> None:
    banner("🎲 RESUMEN DE LA SIMULACIÓN")
    click.echo(f"📊 Réplicas: {resumen['n_replicas']} | Ciclos: {resumen['n_cycles']}")
    click.echo(f"📥 Átomos recargados por ciclo (promedio): {_fmt(resumen['mean_loaded'], 1)}")
    click.echo(f"🎯 Meseta del registro: {_fmt(resumen['plateau'], 1)} átomos")
    click.echo(f"📈 Meseta / recargados: {_fmt(resumen['ratio'], 2)}")
    click.echo(f"🔬 α_c emergente: {_fmt(resumen['alpha_c'], 4)} | α_r emergente: {_fmt(resumen['alpha_r'], 4)}")
    for ruta in resumen["files"]:
        click.echo(f"💾 {ruta}")
    click.echo("✅ Simulación completada")


def show_plan(resumen: Dict[str, object]) -> None:
    banner("🚚 PLAN DE REORDENAMIENTO")
    click.echo(f"📦 Movimientos: {resumen['moves']} | Sin pareja: {resumen['unpaired']}")
    click.echo(f"⏱️ Duración del plan: {_fmt(resumen['duration_ms'], 3)} ms")
    click.echo(f"📏 Longitud media: {_fmt(resumen['mean_length_um'], 3)} μm")
    click.echo(f"⚠️ Violaciones de despeje: {resumen['violations']}")
    for ruta in resumen["files"]:
        click.echo(f"💾 {ruta}")


def show_analysis(nombre: str, resumen: Dict[str, object]) -> None:
    banner(f"📊 ANÁLISIS: {nombre}")
    click.echo(f"📋 Ciclos: {resumen['n_cycles']}")
    if resumen.get("counts_only"):
        click.echo("⚠️ Traza sin grillas: solo superposición y ajuste a partir de los conteos")
    else:
        click.echo("\n🔗 Correlaciones con ΔN_s/N_s (referencia entre paréntesis):")
        for cantidad, rho in resumen["correlations"].items():
            referencia = REFERENCE_PEARSON.get(cantidad)
            click.echo(f"   {cantidad:<8} {_fmt(rho, 3):>8}   ({_fmt(referencia, 2)})")
    ajuste = resumen.get("decay_fit")
    if ajuste is not None:
        click.echo(
            f"\n📉 Ajuste del decaimiento {ajuste.window[0]}:{ajuste.window[1]}: "
            f"supervivencia {_fmt(ajuste.survival, 4)}, α_c {_fmt(ajuste.alpha_c, 4)}"
        )
    for ruta in resumen["files"]:
        click.echo(f"💾 {ruta}")


def show_error(mensaje: str) -> None:
    click.echo(f"❌ {mensaje}", err=True)

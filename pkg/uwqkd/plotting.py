"""
QBER-versus-distance plots of sweep results as static SVG.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from uwqkd.detectors import Scheme  # noqa: E402
from uwqkd.errors import DomainError  # noqa: E402
from uwqkd.sweep import SweepResult, SweepRow  # noqa: E402

logger = logging.getLogger(__name__)

QBER_FLOOR = 1e-8

SCHEME_STYLE = {
    Scheme.HD: ("tab:red", "o"),
    Scheme.QMLD: ("tab:blue", "s"),
    Scheme.QMSD: ("tab:green", "^"),
}
VARIANT_DASHES = ["-", "--", ":", "-."]


@dataclass(frozen=True)
class PlotSpec:
    title: str = ""
    show_mc: bool = True
    floor: float = QBER_FLOOR
    width: float = 6.4
    height: float = 4.8


SeriesKey = Tuple


def _series_key(row: SweepRow) -> SeriesKey:
    return (row.scheme, row.water, row.m, row.theta, row.lambda_E, row.L, row.N)


def _label(key: SeriesKey, varying: List[int]) -> str:
    names = ("scheme", "water", "m", "θ", "λ", "L", "N")
    parts = [key[0].value]
    for index in varying:
        parts.append(f"{names[index]}={key[index]}")
    return ", ".join(parts)


def group_series(result: SweepResult) -> "OrderedDict[SeriesKey, List[SweepRow]]":
    """
    Rows grouped into curves over distance. Every curve must be sampled on
    the same strictly increasing distances.
    """
    series: "OrderedDict[SeriesKey, List[SweepRow]]" = OrderedDict()
    for row in result.rows:
        series.setdefault(_series_key(row), []).append(row)
    axis = None
    for key, rows in series.items():
        distances = [row.d_m for row in rows]
        if any(b <= a for a, b in zip(distances, distances[1:])):
            raise DomainError(f"series {key[0].value} has repeated or unordered distances {distances}")
        if axis is None:
            axis = distances
        elif distances != axis:
            raise DomainError(f"inconsistent distance axes: {axis} vs {distances}")
    return series


def _floored(values: List[Optional[float]], floor: float) -> Tuple[np.ndarray, bool]:
    array = np.array([np.nan if v is None else v for v in values], dtype=float)
    clamped = bool(np.any(array < floor))
    return np.where(array < floor, floor, array), clamped


def emit_plot(result: SweepResult, path: Union[str, Path], spec: Optional[PlotSpec] = None) -> Path:
    """One SVG with an analytic line and Monte Carlo error bars per series."""
    spec = spec or PlotSpec(title=result.name)
    series = group_series(result)
    keys = list(series)
    varying = [i for i in range(1, 7) if len({key[i] for key in keys}) > 1]
    variants: Dict[SeriesKey, int] = {}

    matplotlib.rcParams["svg.hashsalt"] = "uwqkd"
    matplotlib.rcParams["svg.fonttype"] = "none"
    fig, ax = plt.subplots(figsize=(spec.width, spec.height))
    clamped_any = False
    try:
        for key, rows in series.items():
            scheme = key[0]
            color, marker = SCHEME_STYLE[scheme]
            variant = variants.setdefault(key[1:], len(variants))
            dash = VARIANT_DASHES[variant % len(VARIANT_DASHES)]
            label = _label(key, varying)
            d = np.array([row.d_m for row in rows])
            gid = "series-" + "-".join(str(getattr(k, "value", k)) for k in key)

            analytic, clamped = _floored([row.qber_analytic for row in rows], spec.floor)
            clamped_any |= clamped
            if np.any(np.isfinite(analytic)):
                (line,) = ax.plot(d, analytic, dash, color=color, label=label)
                line.set_gid(gid + "-analytic")
            if spec.show_mc and any(row.qber_mc is not None for row in rows):
                mc, clamped = _floored([row.qber_mc for row in rows], spec.floor)
                clamped_any |= clamped
                err = np.array([row.qber_mc_stderr or 0.0 for row in rows])
                lower = np.minimum(err, mc - spec.floor * 0.5)
                bars = ax.errorbar(
                    d, mc, yerr=[np.clip(lower, 0.0, None), err], fmt=marker, color=color,
                    markerfacecolor="none", capsize=2,
                    label=None if np.any(np.isfinite(analytic)) else label,
                )
                bars.lines[0].set_gid(gid + "-mc")

        ax.set_yscale("log")
        ax.set_xlabel("distance d (m)")
        ax.set_ylabel("QBER")
        if spec.title:
            ax.set_title(spec.title)
        ax.grid(True, which="both", alpha=0.3)
        if clamped_any:
            ax.plot([], [], " ", label=f"QBER = 0 drawn at {spec.floor:g}")
        if keys:
            ax.legend(fontsize="small")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    logger.info("wrote %s (%d series)", path, len(series))
    return path

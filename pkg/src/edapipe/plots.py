"""Dependency-free SVG rendering of processed session traces.

Two stacked panels: skin conductance with the scaled slider traces
overlaid on a secondary axis, and the tonic/phasic decomposition. The
output is deterministic text, so artifacts diff cleanly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .signal import ProcessedSession

_W, _H = 960, 520
_PANEL_H = 220
_MARGIN = 50


def _polyline(x: np.ndarray, y: np.ndarray, x_range, y_range,
              y_top: float, color: str, width: float = 1.2) -> str:
    x0, x1 = x_range
    y0, y1 = y_range
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    px = _MARGIN + (x - x0) / (x1 - x0) * (_W - 2 * _MARGIN)
    py = y_top + _PANEL_H - (y - y0) / (y1 - y0) * _PANEL_H
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    return (f'<polyline fill="none" stroke="{color}" '
            f'stroke-width="{width}" points="{pts}"/>')


def _text(x: float, y: float, s: str, color: str = "#333",
          size: int = 13) -> str:
    return (f'<text x="{x:.0f}" y="{y:.0f}" fill="{color}" '
            f'font-size="{size}" font-family="sans-serif">{s}</text>')


def render_session_svg(processed: ProcessedSession, path: str | Path) -> None:
    t_s = processed.t_ms / 1000.0
    x_range = (float(t_s[0]), float(t_s[-1]))

    sc = processed.conductance.values
    psm = processed.psm_cm.values
    psm_f = processed.psm_filtered_cm.values
    tonic = processed.tonic.values
    phasic = processed.phasic.values

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
        f'height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        _text(_MARGIN, 24,
              f"session {processed.config.subject_id}: skin conductance (uS) "
              "and slider trace (cm, unfiltered / filtered)"),
    ]
    top1 = 40.0
    sc_range = (float(sc.min()), float(sc.max()))
    parts.append(_polyline(t_s, sc, x_range, sc_range, top1, "#1f77b4"))
    psm_range = (0.0, 10.0)
    parts.append(_polyline(t_s, psm, x_range, psm_range, top1, "#c7c7c7", 0.8))
    parts.append(_polyline(t_s, psm_f, x_range, psm_range, top1, "#d62728"))

    top2 = top1 + _PANEL_H + 40.0
    parts.append(_text(_MARGIN, top2 - 10, "tonic (uS) and phasic (uS)"))
    tonic_range = (float(tonic.min()), float(tonic.max()))
    parts.append(_polyline(t_s, tonic, x_range, tonic_range, top2, "#2ca02c"))
    ph_range = (float(phasic.min()), float(phasic.max()))
    parts.append(_polyline(t_s, phasic, x_range, ph_range, top2, "#9467bd"))
    parts.append(_text(_MARGIN, top2 + _PANEL_H + 24,
                       f"time {x_range[0]:.0f}-{x_range[1]:.0f} s, "
                       f"{len(processed.peaks)} detected responses"))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")

"""Standalone SVG timelines of section annotations."""

from __future__ import annotations

import json
from importlib import resources
from xml.etree import ElementTree as ET

from .annotation import LABELS, boundaries_of
from .metrics import match_boundaries

SVG_NS = "http://www.w3.org/2000/svg"


def load_palette(path=None):
    """Label -> hex color. Defaults to the palette shipped with the package."""
    if path is None:
        text = resources.files("edmseg").joinpath("palette.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    palette = json.loads(text)
    missing = [lab.value for lab in LABELS if lab.value not in palette]
    if missing:
        raise ValueError(f"palette lacks colors for {missing}")
    return palette


def _nice_step(duration, target_ticks=10):
    for step in (1, 2, 5, 10, 15, 30, 60, 120, 300, 600):
        if duration / step <= target_ticks:
            return step
    return 1200


def render_svg(ann, pred=None, width_px=960, height_px=None, palette=None, tolerance_s=0.5):
    """Draw ``ann`` (and optionally ``pred``) as colored section bands.

    Reference segments form the top row with ticks at internal boundaries.
    With ``pred``, a second row shows predicted segments and ticks at
    predicted boundaries; predicted ticks with no reference boundary within
    ``tolerance_s`` (under one-to-one matching) get class ``tick unmatched``.
    A legend lists all seven labels.
    """
    palette = palette or load_palette()
    margin, band_h, gap = 40, 36, 18
    rows = 2 if pred is not None else 1
    legend_y = margin + rows * (band_h + gap) + 24
    if height_px is None:
        height_px = legend_y + 40
    plot_w = width_px - 2 * margin
    scale = plot_w / ann.duration_s

    svg = ET.Element("svg", {
        "xmlns": SVG_NS, "width": str(width_px), "height": str(height_px),
        "viewBox": f"0 0 {width_px} {height_px}", "font-family": "sans-serif", "font-size": "11",
    })
    ET.SubElement(svg, "title").text = f"Sections of {ann.track_id}"
    style = ET.SubElement(svg, "style")
    style.text = (".tick{stroke:#000;stroke-width:1.5}"
                  ".tick.unmatched{stroke:#d62728;stroke-dasharray:3,2;stroke-width:2}"
                  ".axis{stroke:#444}")

    def band_row(a, y, row_name):
        g = ET.SubElement(svg, "g", {"class": f"row {row_name}"})
        for seg in a.segments:
            x0 = margin + seg.start_s * scale
            w = (seg.end_s - seg.start_s) * scale
            ET.SubElement(g, "rect", {
                "class": "band", "x": f"{x0:.2f}", "y": str(y), "width": f"{w:.2f}",
                "height": str(band_h), "fill": palette[seg.label.value],
                "data-label": seg.label.value,
            })
            if w > 30:
                t = ET.SubElement(g, "text", {"x": f"{x0 + w / 2:.2f}", "y": str(y + band_h / 2 + 4),
                                              "text-anchor": "middle", "fill": "#fff"})
                t.text = seg.label.value
        return g

    def ticks(g, times, y, classes):
        for t, cls in zip(times, classes):
            x = margin + t * scale
            ET.SubElement(g, "line", {"class": cls, "x1": f"{x:.2f}", "x2": f"{x:.2f}",
                                      "y1": str(y - 4), "y2": str(y + band_h + 4)})

    ref_g = band_row(ann, margin, "reference")
    ref_b = boundaries_of(ann)
    ticks(ref_g, ref_b, margin, ["tick"] * len(ref_b))

    if pred is not None:
        y2 = margin + band_h + gap
        pred_g = band_row(pred, y2, "prediction")
        pred_b = boundaries_of(pred)
        matched = {i for i, _ in match_boundaries(pred_b, ref_b, tolerance_s)}
        ticks(pred_g, pred_b, y2,
              ["tick" if i in matched else "tick unmatched" for i in range(len(pred_b))])

    axis_y = margin + rows * (band_h + gap) - gap / 2
    axis = ET.SubElement(svg, "g", {"class": "time-axis"})
    ET.SubElement(axis, "line", {"class": "axis", "x1": str(margin), "x2": str(margin + plot_w),
                                 "y1": f"{axis_y:.1f}", "y2": f"{axis_y:.1f}"})
    step = _nice_step(ann.duration_s)
    t = 0
    while t <= ann.duration_s + 1e-9:
        x = margin + t * scale
        ET.SubElement(axis, "line", {"class": "axis", "x1": f"{x:.2f}", "x2": f"{x:.2f}",
                                     "y1": f"{axis_y:.1f}", "y2": f"{axis_y + 4:.1f}"})
        lab = ET.SubElement(axis, "text", {"x": f"{x:.2f}", "y": f"{axis_y + 15:.1f}",
                                           "text-anchor": "middle"})
        lab.text = f"{t:g}"
        t += step
    unit = ET.SubElement(axis, "text", {"x": str(margin + plot_w), "y": f"{axis_y + 28:.1f}",
                                        "text-anchor": "end"})
    unit.text = "time (s)"

    legend = ET.SubElement(svg, "g", {"class": "legend"})
    slot = plot_w / len(LABELS)
    for k, lab in enumerate(LABELS):
        x = margin + k * slot
        ET.SubElement(legend, "rect", {"class": "legend-swatch", "x": f"{x:.2f}", "y": str(legend_y),
                                       "width": "12", "height": "12", "fill": palette[lab.value]})
        txt = ET.SubElement(legend, "text", {"x": f"{x + 16:.2f}", "y": str(legend_y + 10)})
        txt.text = lab.value

    ET.indent(svg)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode") + "\n"

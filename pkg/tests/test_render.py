import xml.etree.ElementTree as ET

from hypothesis import given, settings

from edmseg.annotation import LABELS, Annotation
from edmseg.render import load_palette, render_svg
from strategies import annotations

NS = {"svg": "http://www.w3.org/2000/svg"}


def parse(text):
    return ET.fromstring(text.split("\n", 1)[1])


def bands(root, row=None):
    path = ".//svg:g[@class='row %s']/svg:rect" % row if row else ".//svg:rect[@class='band']"
    return root.findall(path, NS)


def lines(root, cls):
    return [e for e in root.iter("{%s}line" % NS["svg"]) if e.get("class") == cls]


def two_part():
    return Annotation.build("t", 20.0, [(0, 10, "intro"), (10, 20, "drop")])


def test_two_segments_two_bands_one_tick():
    root = parse(render_svg(two_part()))
    assert len(bands(root)) == 2
    assert len(lines(root, "tick")) == 1
    assert "time (s)" in "".join(root.itertext())


def test_full_taxonomy_uses_seven_colors_and_legend():
    edges = list(range(0, 71, 10))
    ann = Annotation.build("all", 70.0, [(edges[i], edges[i + 1], lab) for i, lab in enumerate(LABELS)])
    root = parse(render_svg(ann))
    fills = {r.get("fill") for r in bands(root)}
    assert len(fills) == 7
    swatches = root.findall(".//svg:rect[@class='legend-swatch']", NS)
    assert {s.get("fill") for s in swatches} == fills
    legend_text = [t.text for t in root.findall(".//svg:g[@class='legend']/svg:text", NS)]
    assert legend_text == [lab.value for lab in LABELS]
    assert set(load_palette()) == {lab.value for lab in LABELS}


def test_extra_predicted_boundary_is_marked():
    pred = Annotation.build("t", 20.0, [(0, 5, "intro"), (5, 10.2, "intro"), (10.2, 20, "drop")])
    root = parse(render_svg(two_part(), pred))
    assert len(bands(root, "prediction")) == 3
    assert len(lines(root, "tick unmatched")) == 1
    # one reference tick plus the matched predicted tick
    assert len(lines(root, "tick")) == 2


@given(annotations())
@settings(max_examples=40)
def test_always_well_formed(ann):
    text = render_svg(ann, ann)
    assert text.startswith("<?xml")
    root = parse(text)
    assert len(bands(root, "reference")) == len(ann.segments)

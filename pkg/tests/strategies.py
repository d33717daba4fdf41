"""Hypothesis strategies shared by several test modules."""

from hypothesis import strategies as st

from edmseg.annotation import LABELS, Annotation


@st.composite
def annotations(draw, max_segments=8):
    """Valid annotations on the 1 ms grid."""
    k = draw(st.integers(1, max_segments))
    lengths = draw(st.lists(st.integers(1, 60_000), min_size=k, max_size=k))
    labels = draw(st.lists(st.sampled_from(LABELS), min_size=k, max_size=k))
    edges = [0]
    for L in lengths:
        edges.append(edges[-1] + L)
    segs = [(edges[i] / 1000, edges[i + 1] / 1000, labels[i]) for i in range(k)]
    return Annotation.build("h", edges[-1] / 1000, segs)

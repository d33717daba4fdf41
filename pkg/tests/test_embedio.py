import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from edmseg.annotation import Label, boundaries_of
from edmseg.embedio import (EmbeddingStream, SyntheticSpec, fuse_streams, random_means,
                            read_stream, read_stream_header, stream_from_bytes, stream_to_bytes,
                            synth_track, write_stream)
from edmseg.errors import (BadMagic, BadSpec, BadVersion, EmptyStream, NonFiniteValue,
                           TruncatedFile, WrongStreamCount)


def hand_file(magic=b"EDMF", version=1, tag=b"muq_short@30s-window#0"[:20]):
    assert len(tag) == 20
    head = magic + struct.pack("<IQId", version, 1, 2, 25.0) + struct.pack("<H", len(tag)) + tag
    return head + struct.pack("<2f", 1.0, -2.0)


def test_hand_built_58_byte_file(tmp_path):
    raw = hand_file()
    assert len(raw) == 58
    path = tmp_path / "x.edmf"
    path.write_bytes(raw)
    s = read_stream(path)
    assert s.frames.tolist() == [[1.0, -2.0]]
    assert s.frame_rate == 25.0 and s.n_frames == 1 and s.dim == 2
    assert stream_to_bytes(s) == raw
    assert read_stream_header(path)["n_frames"] == 1


def test_bad_files():
    with pytest.raises(BadMagic):
        stream_from_bytes(hand_file(magic=b"XXXX"))
    with pytest.raises(BadVersion):
        stream_from_bytes(hand_file(version=2))
    with pytest.raises(TruncatedFile):
        stream_from_bytes(hand_file()[:-1])
    with pytest.raises(TruncatedFile):
        stream_from_bytes(b"EDMF")
    bad = hand_file()[:-4] + struct.pack("<f", float("nan"))
    with pytest.raises(NonFiniteValue):
        stream_from_bytes(bad)


frames = hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12),
                    elements=st.floats(-1e6, 1e6, width=32))


@given(frames, st.sampled_from([1.0, 2.0, 5.0, 25.0, 43.06640625]), st.text(max_size=30))
@settings(max_examples=60)
def test_round_trip_is_bit_exact(arr, rate, tag):
    s = EmbeddingStream(arr, rate, tag)
    raw = stream_to_bytes(s)
    again = stream_from_bytes(raw)
    assert again == s
    assert np.array_equal(again.frames.view(np.uint32), arr.view(np.uint32))
    assert stream_to_bytes(again) == raw


def test_write_read_file(tmp_path):
    s = EmbeddingStream(np.arange(12, dtype=np.float32).reshape(3, 4), 5.0, "mfm_long")
    write_stream(s, tmp_path / "a.edmf")
    assert read_stream(tmp_path / "a.edmf") == s


def const(v, rate=1.0, n=1):
    return EmbeddingStream(np.full((n, 1), v, dtype=np.float32), rate, "c")


def test_fuse_order_and_full_width():
    fused = fuse_streams([const(1), const(2), const(3), const(4)], 1.0)
    assert fused.matrix.tolist() == [[1, 2, 3, 4]]
    wide = [EmbeddingStream(np.zeros((3, 1024), np.float32), 2.0, t) for t in "abcd"]
    assert fuse_streams(wide, 2.0).dim == 4096


def test_fuse_nearest_center():
    a = EmbeddingStream(np.array([[0.0], [1.0], [2.0], [3.0]], np.float32), 2.0, "a")
    others = [EmbeddingStream(np.array([[10.0], [11.0]], np.float32), 1.0, t) for t in "bcd"]
    fused = fuse_streams([a] + others, 1.0)
    assert fused.n_frames == 2
    # centers 0.5 s and 1.5 s sit on the edge between two 2 fps frames; the later one wins
    assert fused.matrix[:, 0].tolist() == [1.0, 3.0]
    assert fused.matrix[:, 1].tolist() == [10.0, 11.0]


def test_fuse_errors():
    with pytest.raises(WrongStreamCount):
        fuse_streams([const(1)] * 3, 1.0)
    with pytest.raises(EmptyStream):
        EmbeddingStream(np.zeros((0, 1), np.float32), 1.0, "e")
    # a 0.5 s stream has no complete frame on a 1 fps grid
    with pytest.raises(EmptyStream):
        fuse_streams([const(1, rate=2.0), const(1), const(1), const(1)], 1.0)


@given(st.integers(1, 20), st.integers(1, 5), st.integers(0, 2**32))
@settings(max_examples=40)
def test_same_grid_fuse_is_plain_concatenation(n, d, seed):
    rng = np.random.default_rng(seed)
    streams = [EmbeddingStream(rng.standard_normal((n, d)).astype(np.float32), 4.0, t) for t in "abcd"]
    fused = fuse_streams(streams, 4.0)
    assert np.array_equal(fused.matrix, np.concatenate([s.frames for s in streams], axis=1))
    assert np.isfinite(fused.matrix).all()


@given(st.integers(1, 30), st.integers(1, 30), st.sampled_from([0.5, 1.0, 2.0, 3.0, 7.5]))
def test_fuse_length_is_floor_of_shortest(n1, n2, target):
    streams = [const(0, 5.0, n1), const(0, 2.0, n2), const(0, 5.0, n1), const(0, 5.0, n1)]
    shortest = min(n1 / 5.0, n2 / 2.0)
    expected = int(np.floor(shortest * target + 1e-9))
    if expected == 0:
        with pytest.raises(EmptyStream):
            fuse_streams(streams, target)
    else:
        assert fuse_streams(streams, target).n_frames == expected


def toy_means(dim=3):
    return {lab: [np.full(dim, float(lab.ordinal) + 0.25 * j) for j in range(4)] for lab in Label}


def test_synth_zero_noise():
    spec = SyntheticSpec([("intro", 10), ("drop", 10)], toy_means(), frame_rate=5.0, track_id="z")
    streams, ann = synth_track(spec)
    assert boundaries_of(ann) == [10.0]
    assert ann.labels == [Label.INTRO, Label.DROP]
    for j, s in enumerate(streams):
        assert s.n_frames == 100
        assert np.all(s.frames[:50] == np.float32(0.25 * j))
        assert np.all(s.frames[50:] == np.float32(2 + 0.25 * j))


def test_synth_ramp_interpolates():
    means = toy_means(1)
    spec = SyntheticSpec([("intro", 4), ("buildup", 4), ("drop", 4)], means,
                         ramp_labels=frozenset({Label.BUILDUP}), frame_rate=1.0)
    streams, _ = synth_track(spec)
    col = streams[0].frames[:, 0].astype(np.float64)
    mu_i, mu_d = means[Label.INTRO][0][0], means[Label.DROP][0][0]
    for frame in range(4, 8):
        f = ((frame + 0.5) - 4) / 4
        assert col[frame] == pytest.approx((1 - f) * mu_i + f * mu_d, abs=1e-6)
    # f = 0.5 is the exact midpoint between the two means
    spec2 = SyntheticSpec([("intro", 2), ("buildup", 1), ("drop", 2)], means,
                          ramp_labels=frozenset({Label.BUILDUP}), frame_rate=1.0)
    mid = synth_track(spec2)[0][0].frames[2, 0]
    assert mid == pytest.approx(0.5 * (mu_i + mu_d))


def test_synth_is_deterministic_and_seed_sensitive():
    spec = SyntheticSpec([("intro", 8), ("drop", 9)], random_means(8, 1), noise_sigma=0.5, seed=3)
    a, ann_a = synth_track(spec)
    b, ann_b = synth_track(spec)
    assert a == b and ann_a == ann_b
    c, _ = synth_track(SyntheticSpec(spec.sections, spec.means, 0.5, seed=4))
    assert a != c


def test_noise_mean_converges():
    means = random_means(8, 11)
    spec = SyntheticSpec([("drop", 2000)], means, noise_sigma=1.0, frame_rate=5.0, seed=9)
    streams, _ = synth_track(spec)
    for j, s in enumerate(streams):
        assert s.n_frames == 10_000
        err = np.abs(s.frames.astype(np.float64).mean(axis=0) - means[Label.DROP][j])
        assert err.max() < 0.05


def test_bad_spec():
    with pytest.raises(BadSpec):
        synth_track(SyntheticSpec([], toy_means()))
    with pytest.raises(BadSpec):
        synth_track(SyntheticSpec([("intro", -1)], toy_means()))
    with pytest.raises(BadSpec):
        synth_track(SyntheticSpec([("intro", 1)], {Label.DROP: toy_means()[Label.DROP]}))

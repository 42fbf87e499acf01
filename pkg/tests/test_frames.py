import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import pack_raw10_scalar, unpack_raw10_scalar
from evsynth import FormatError, FrameSequence, TruncatedPayloadError, read_frames, write_frames
from evsynth.frames import (BayerMosaic, bayer_to_luma, pack_csi2p_10bit, read_pgm,
                            rgb_to_gray, sequence_to_luma, unpack_csi2p_10bit, write_pgm)


def test_unpack_high_bits():
    m = unpack_csi2p_10bit(bytes([0xFF, 0, 0, 0, 0b00000011]) * 2, 4, 2)
    assert m.samples[0].tolist() == [1023, 0, 0, 0]


def test_unpack_low_bit_pairs_ascend():
    m = unpack_csi2p_10bit(bytes([0, 0, 0, 0x01, 0b11000000]) * 2, 4, 2)
    assert m.samples[0].tolist() == [0, 0, 0, 7]


def test_unpack_length_and_width_checks():
    with pytest.raises(FormatError):
        unpack_csi2p_10bit(b"\0" * 9, 4, 2)
    with pytest.raises(FormatError):
        unpack_csi2p_10bit(b"\0" * 10, 6, 2)


@settings(max_examples=100)
@given(st.binary(min_size=40, max_size=40))
def test_unpack_matches_scalar_oracle_and_roundtrips(payload):
    m = unpack_csi2p_10bit(payload, 8, 4)
    assert m.samples.reshape(-1).tolist() == unpack_raw10_scalar(payload)
    assert m.samples.max() < 1024
    assert pack_csi2p_10bit(m.samples) == payload


@settings(max_examples=100)
@given(st.lists(st.integers(0, 1023), min_size=16, max_size=16))
def test_pack_matches_scalar_oracle(pixels):
    assert pack_csi2p_10bit(np.array(pixels).reshape(2, 8)) == pack_raw10_scalar(pixels)


@pytest.mark.parametrize("mode", ["green-mean", "quad-mean"])
def test_luma_of_single_quad(mode):
    m = BayerMosaic(2, 2, "RGGB", [[100, 200], [300, 400]])
    assert bayer_to_luma(m, mode).tolist() == [[250]]


def test_luma_rounds_half_up():
    m = BayerMosaic(2, 2, "RGGB", [[0, 1], [2, 0]])
    assert bayer_to_luma(m, "green-mean")[0, 0] == 2
    m = BayerMosaic(2, 2, "RGGB", [[1, 1], [0, 0]])
    assert bayer_to_luma(m, "quad-mean")[0, 0] == 1


@pytest.mark.parametrize("pattern, greens", [("RGGB", (1, 2)), ("BGGR", (1, 2)),
                                             ("GRBG", (0, 3)), ("GBRG", (0, 3))])
def test_green_sites_per_pattern(pattern, greens):
    quad = np.array([[10, 20], [30, 40]])
    m = BayerMosaic(2, 2, pattern, quad)
    flat = quad.reshape(-1)
    assert bayer_to_luma(m)[0, 0] == (flat[greens[0]] + flat[greens[1]] + 1) // 2


@settings(max_examples=50)
@given(st.integers(0, 1023), st.sampled_from(["RGGB", "BGGR", "GRBG", "GBRG"]),
       st.sampled_from(["green-mean", "quad-mean"]))
def test_constant_mosaic_is_constant_luma(v, pattern, mode):
    out = bayer_to_luma(BayerMosaic(8, 4, pattern, np.full((4, 8), v)), mode)
    assert out.shape == (2, 4)
    assert np.all(out == v)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 1000), min_size=16, max_size=16), st.integers(0, 23),
       st.sampled_from(["green-mean", "quad-mean"]))
def test_brighter_mosaic_gives_brighter_luma(samples, gain, mode):
    base = np.array(samples).reshape(4, 4)
    a = bayer_to_luma(BayerMosaic(4, 4, "GRBG", base), mode)
    b = bayer_to_luma(BayerMosaic(4, 4, "GRBG", base + gain), mode)
    assert np.all(b >= a)


def test_odd_mosaic_rejected():
    with pytest.raises(FormatError):
        BayerMosaic(3, 2, "RGGB", np.zeros((2, 3)))


@pytest.mark.parametrize("rgb, gray", [((255, 255, 255), 255), ((0, 0, 0), 0),
                                       ((255, 0, 0), 76), ((0, 255, 0), 150),
                                       ((0, 0, 255), 29)])
def test_rgb_to_gray(rgb, gray):
    assert rgb_to_gray(np.array([[rgb]]))[0, 0] == gray
    assert gray == int(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2] + 0.5)


def _sequence(rng, n=3, w=6, h=4, depth=10, pattern=0):
    frames = rng.integers(0, 1 << depth, size=(n, h, w))
    ts = np.cumsum(rng.integers(1, 50_000, size=n))
    return FrameSequence(w, h, depth, ts, frames, pattern)


def test_r2ef_header_bytes(tmp_path):
    seq = FrameSequence(2, 1, 10, [7], [[[1, 1023]]], 1)
    write_frames(tmp_path / "a.r2ef", seq)
    data = (tmp_path / "a.r2ef").read_bytes()
    assert data == (b"R2EF" + bytes([1, 0, 2, 0, 1, 0, 10, 1, 1, 0, 0, 0])
                    + (7).to_bytes(8, "little") + bytes([1, 0, 0xFF, 0x03]))


@pytest.mark.parametrize("depth, pattern", [(10, 0), (8, 0), (10, 3)])
def test_r2ef_roundtrip(tmp_path, rng, depth, pattern):
    seq = _sequence(rng, depth=depth, pattern=pattern)
    write_frames(tmp_path / "s.r2ef", seq)
    assert read_frames(tmp_path / "s.r2ef") == seq


def test_r2ef_truncated(tmp_path, rng):
    write_frames(tmp_path / "s.r2ef", _sequence(rng))
    data = (tmp_path / "s.r2ef").read_bytes()
    for cut in (3, 20, len(data) - 1):
        (tmp_path / "t.r2ef").write_bytes(data[:cut])
        with pytest.raises(TruncatedPayloadError):
            read_frames(tmp_path / "t.r2ef")


def test_r2ef_bad_magic_and_version(tmp_path, rng):
    write_frames(tmp_path / "s.r2ef", _sequence(rng))
    data = bytearray((tmp_path / "s.r2ef").read_bytes())
    bad = bytes(b"XXXX" + data[4:])
    (tmp_path / "m.r2ef").write_bytes(bad)
    with pytest.raises(FormatError):
        read_frames(tmp_path / "m.r2ef")
    data[4] = 2
    (tmp_path / "v.r2ef").write_bytes(bytes(data))
    with pytest.raises(FormatError):
        read_frames(tmp_path / "v.r2ef")


def test_r2ef_non_monotonic_timestamps(tmp_path, rng):
    write_frames(tmp_path / "s.r2ef", _sequence(rng, n=2, w=2, h=1))
    data = bytearray((tmp_path / "s.r2ef").read_bytes())
    second = 16 + 8 + 4
    data[second:second + 8] = (0).to_bytes(8, "little")
    (tmp_path / "n.r2ef").write_bytes(bytes(data))
    with pytest.raises(FormatError):
        read_frames(tmp_path / "n.r2ef")


def test_sequence_invariants():
    with pytest.raises(FormatError):
        FrameSequence(1, 1, 8, [0], [[[256]]])
    with pytest.raises(FormatError):
        FrameSequence(1, 1, 8, [5, 5], [[[0]], [[0]]])
    with pytest.raises(FormatError):
        FrameSequence(1, 1, 12, [0], [[[0]]])


def test_pgm_directory(tmp_path, rng):
    seq = _sequence(rng, n=3, depth=8)
    write_frames(tmp_path / "dir", seq)
    assert (tmp_path / "dir" / "timestamps.csv").exists()
    back = read_frames(tmp_path / "dir")
    assert len(back) == 3
    assert back == seq


def test_pgm_directory_from_foreign_files(tmp_path):
    d = tmp_path / "pgms"
    d.mkdir()
    for i in range(3):
        write_pgm(d / f"img{i}.pgm", np.full((2, 3), 10 * i, np.uint8), 255)
    (d / "timestamps.csv").write_text("frame_index,timestamp_us\n0,100\n1,250\n2,400\n")
    seq = read_frames(d)
    assert seq.timestamps.tolist() == [100, 250, 400]
    assert seq.frames[2, 1, 2] == 20


def test_pgm_16bit_roundtrip(tmp_path):
    img = np.array([[0, 1023], [512, 7]], np.uint16)
    write_pgm(tmp_path / "x.pgm", img, 1023)
    back, maxval = read_pgm(tmp_path / "x.pgm")
    assert maxval == 1023
    np.testing.assert_array_equal(back, img)


def test_sequence_to_luma(rng):
    seq = _sequence(rng, n=2, w=8, h=4, pattern=1)
    luma = sequence_to_luma(seq)
    assert (luma.width, luma.height, luma.bayer_pattern) == (4, 2, 0)
    assert sequence_to_luma(luma) is luma

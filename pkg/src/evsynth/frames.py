"""Frame inputs: packed CSI-2 raw decoding, luma reduction, and the R2EF container.

R2EF layout (little-endian)::

    "R2EF" | version u16 | width u16 | height u16 | bit_depth u8 | pattern u8 | count u32
    count x ( timestamp u64 | width*height u16 row-major )
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncatedPayloadError

PATTERNS = {"none": 0, "RGGB": 1, "BGGR": 2, "GRBG": 3, "GBRG": 4}
PATTERN_NAMES = {v: k for k, v in PATTERNS.items()}

_R2EF_HEADER = struct.Struct("<4sHHHBBI")
_R2EF_MAGIC = b"R2EF"
_R2EF_VERSION = 1


@dataclass
class FrameSequence:
    """Timestamped frames, ``frames`` has shape (n, height, width) and dtype uint16."""

    width: int
    height: int
    bit_depth: int
    timestamps: np.ndarray
    frames: np.ndarray
    bayer_pattern: int = 0
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.uint64).reshape(-1)
        self.frames = np.asarray(self.frames)
        if self.bit_depth not in (8, 10):
            raise FormatError(f"bit_depth must be 8 or 10, got {self.bit_depth}")
        if self.bayer_pattern not in PATTERN_NAMES:
            raise FormatError(f"unknown bayer pattern code {self.bayer_pattern}")
        if self.frames.ndim != 3 or self.frames.shape[1:] != (self.height, self.width):
            raise FormatError(
                f"frames shape {self.frames.shape} does not match {self.height}x{self.width}")
        if self.frames.shape[0] != self.timestamps.shape[0]:
            raise FormatError("one timestamp per frame required")
        if self.frames.dtype != np.uint16:
            if self.frames.size and (self.frames.min() < 0 or self.frames.max() >= 2**16):
                raise FormatError("samples do not fit in uint16")
            self.frames = self.frames.astype(np.uint16)
        if self.frames.size and int(self.frames.max()) >= 1 << self.bit_depth:
            raise FormatError(f"sample >= 2**{self.bit_depth}")
        if np.any(np.diff(self.timestamps.astype(np.int64)) <= 0):
            raise FormatError("frame timestamps must be strictly increasing")

    def __len__(self):
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and self.bit_depth == other.bit_depth
                and self.bayer_pattern == other.bayer_pattern
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.frames, other.frames))


@dataclass
class BayerMosaic:
    width: int
    height: int
    pattern: str
    samples: np.ndarray

    def __post_init__(self):
        if self.width % 2 or self.height % 2:
            raise FormatError("Bayer mosaic dimensions must be even")
        if self.pattern not in PATTERNS or self.pattern == "none":
            raise FormatError(f"unknown Bayer pattern {self.pattern!r}")
        self.samples = np.asarray(self.samples, dtype=np.uint16).reshape(self.height, self.width)


def unpack_csi2p_10bit(packed, width: int, height: int, pattern: str = "RGGB") -> BayerMosaic:
    """Decode MIPI CSI-2 packed RAW10 (4 pixels in 5 bytes) into a mosaic."""
    if width % 4:
        raise FormatError(f"width must be a multiple of 4, got {width}")
    buf = np.frombuffer(bytes(packed), dtype=np.uint8)
    expected = height * (width // 4) * 5
    if buf.size != expected:
        raise FormatError(f"packed length {buf.size} != expected {expected}")
    groups = buf.reshape(-1, 5).astype(np.uint16)
    low = groups[:, 4:5]
    shifts = np.arange(4, dtype=np.uint16) * 2
    pixels = (groups[:, :4] << 2) | ((low >> shifts) & 0x3)
    return BayerMosaic(width, height, pattern, pixels.reshape(height, width))


def pack_csi2p_10bit(samples) -> bytes:
    """Inverse of :func:`unpack_csi2p_10bit`."""
    samples = np.asarray(samples, dtype=np.uint16)
    if samples.shape[-1] % 4:
        raise FormatError("row width must be a multiple of 4")
    if samples.size and samples.max() >= 1024:
        raise FormatError("sample out of 10-bit range")
    quads = samples.reshape(-1, 4)
    out = np.empty((quads.shape[0], 5), dtype=np.uint8)
    out[:, :4] = quads >> 2
    low = quads & 0x3
    out[:, 4] = low[:, 0] | (low[:, 1] << 2) | (low[:, 2] << 4) | (low[:, 3] << 6)
    return out.tobytes()


# (row, col) of R, G1, G2, B inside a 2x2 quad
_QUAD_LAYOUT = {
    "RGGB": ((0, 0), (0, 1), (1, 0), (1, 1)),
    "BGGR": ((1, 1), (0, 1), (1, 0), (0, 0)),
    "GRBG": ((0, 1), (0, 0), (1, 1), (1, 0)),
    "GBRG": ((1, 0), (0, 0), (1, 1), (0, 1)),
}


def bayer_to_luma(mosaic: BayerMosaic, mode: str = "green-mean") -> np.ndarray:
    """Half-resolution luminance from 2x2 quads, integer round-half-up."""
    s = mosaic.samples.astype(np.uint32)
    (ry, rx), (g1y, g1x), (g2y, g2x), (by, bx) = _QUAD_LAYOUT[mosaic.pattern]
    g1 = s[g1y::2, g1x::2]
    g2 = s[g2y::2, g2x::2]
    if mode == "green-mean":
        out = (g1 + g2 + 1) // 2
    elif mode == "quad-mean":
        out = (s[ry::2, rx::2] + g1 + g2 + s[by::2, bx::2] + 2) // 4
    else:
        raise ValueError(f"unknown luma mode {mode!r}")
    return out.astype(np.uint16)


def rgb_to_gray(rgb) -> np.ndarray:
    """8-bit luma with the ITU-R BT.601 weights; channel order is R, G, B."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ValueError("expected a trailing channel axis of length 3")
    gray = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.floor(gray + 0.5), 0, 255).astype(np.uint16)


def sequence_to_luma(seq: FrameSequence, mode: str = "green-mean") -> FrameSequence:
    """Reduce a Bayer sequence to luminance; luma sequences pass through."""
    if seq.bayer_pattern == 0:
        return seq
    pattern = PATTERN_NAMES[seq.bayer_pattern]
    frames = np.stack([bayer_to_luma(BayerMosaic(seq.width, seq.height, pattern, f), mode)
                       for f in seq.frames]) if len(seq) else np.zeros(
        (0, seq.height // 2, seq.width // 2), np.uint16)
    return FrameSequence(seq.width // 2, seq.height // 2, seq.bit_depth,
                         seq.timestamps.copy(), frames)


def write_frames(path, seq: FrameSequence) -> None:
    """Write ``seq`` as an R2EF file, or as PGMs + timestamps.csv.

    The PGM directory layout is used when ``path`` is an existing directory or
    has no file suffix.
    """
    path = Path(path)
    if path.is_dir() or not path.suffix:
        _write_pgm_dir(path, seq)
        return
    with open(path, "wb") as f:
        f.write(_R2EF_HEADER.pack(_R2EF_MAGIC, _R2EF_VERSION, seq.width, seq.height,
                                  seq.bit_depth, seq.bayer_pattern, len(seq)))
        for ts, frame in zip(seq.timestamps, seq.frames):
            f.write(struct.pack("<Q", int(ts)))
            f.write(frame.astype("<u2").tobytes())


def read_frames(path) -> FrameSequence:
    path = Path(path)
    if path.is_dir():
        return _read_pgm_dir(path)
    data = path.read_bytes()
    if len(data) < _R2EF_HEADER.size:
        raise TruncatedPayloadError(f"{path}: truncated payload (header)")
    magic, version, width, height, bit_depth, pattern, count = _R2EF_HEADER.unpack_from(data)
    if magic != _R2EF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _R2EF_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    record = np.dtype([("t", "<u8"), ("s", "<u2", (height, width))])
    need = _R2EF_HEADER.size + count * record.itemsize
    if len(data) < need:
        raise TruncatedPayloadError(
            f"{path}: truncated payload ({len(data)} of {need} bytes)")
    if len(data) > need:
        raise FormatError(f"{path}: {len(data) - need} trailing bytes")
    recs = np.frombuffer(data, dtype=record, count=count, offset=_R2EF_HEADER.size)
    return FrameSequence(width, height, bit_depth, recs["t"].copy(),
                         recs["s"].astype(np.uint16), pattern)


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary (P5) PGM as (image, maxval). 16-bit samples are big-endian."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    n = width * height * np.dtype(dtype).itemsize
    if len(data) - pos < n:
        raise TruncatedPayloadError(f"{path}: truncated payload")
    img = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return img.reshape(height, width).astype(np.uint16), maxval


def write_pgm(path, image, maxval: int | None = None) -> None:
    image = np.asarray(image)
    if maxval is None:
        maxval = 255 if image.size == 0 or image.max() <= 255 else 1023
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(image.astype(dtype).tobytes())


def _write_pgm_dir(path: Path, seq: FrameSequence) -> None:
    path.mkdir(parents=True, exist_ok=True)
    maxval = (1 << seq.bit_depth) - 1
    for i, frame in enumerate(seq.frames):
        write_pgm(path / f"frame_{i:06d}.pgm", frame, maxval)
    with open(path / "timestamps.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame_index", "timestamp_us"])
        for i, ts in enumerate(seq.timestamps):
            w.writerow([i, int(ts)])


def _read_pgm_dir(path: Path) -> FrameSequence:
    files = sorted(path.glob("*.pgm"))
    sidecar = path / "timestamps.csv"
    if not sidecar.exists():
        raise FormatError(f"{path}: missing timestamps.csv")
    stamps = {}
    with open(sidecar, newline="") as f:
        for row in csv.reader(f):
            if not row or not row[0].strip().lstrip("-").isdigit():
                continue
            stamps[int(row[0])] = int(row[1])
    if sorted(stamps) != list(range(len(files))):
        raise FormatError(f"{path}: sidecar lists {len(stamps)} frames, found {len(files)} PGMs")
    images, maxvals = zip(*(read_pgm(f) for f in files)) if files else ((), ())
    bit_depth = 10 if any(m > 255 for m in maxvals) else 8
    if not images:
        raise FormatError(f"{path}: no PGM frames")
    h, w = images[0].shape
    if any(img.shape != (h, w) for img in images):
        raise FormatError(f"{path}: frames have differing geometry")
    return FrameSequence(w, h, bit_depth, [stamps[i] for i in range(len(files))],
                         np.stack(images))

"""On-disk formats: PGM/PPM images, binary matrices, parameter files, trace CSVs.

Matrix file (``.mat``)::

    b"NTKM"            4-byte magic
    u32 rank           little-endian
    u64 dims[rank]     little-endian
    f64 payload        little-endian, row-major

Parameter file (``.params``): one ASCII header line followed by the raw
little-endian float64 values::

    NOISEINIT-PARAMS v1 spec=<16 hex digits> length=<p>\\n

Trace CSV: header ``iter,loss,psnr``; floats with 17 significant digits,
empty ``psnr`` cell when no reference was available.
"""

from __future__ import annotations

import csv
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .nets import NetSpec, ParamVector, layout_for, spec_hash
from .tasks import TrainingTrace
from .tensor import as_tensor

LUMA = (0.299, 0.587, 0.114)
MATRIX_MAGIC = b"NTKM"
PARAMS_TAG = "NOISEINIT-PARAMS"


# --------------------------------------------------------------------------
# images


@dataclass(frozen=True)
class ImageFile:
    pixels: np.ndarray  # H×W or 3×H×W in [0, 1]
    source_depth: int  # 8 or 16 bits

    @property
    def is_color(self) -> bool:
        return self.pixels.ndim == 3

    def grayscale(self) -> np.ndarray:
        if not self.is_color:
            return self.pixels
        r, g, b = self.pixels
        return LUMA[0] * r + LUMA[1] * g + LUMA[2] * b


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the first payload byte.
    """
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise FormatError(f"truncated header at byte {pos}")
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if pos >= n:
        raise FormatError(f"missing payload after header at byte {pos}")
    return tokens, pos + 1  # exactly one whitespace byte ends the header


def load_image(path) -> ImageFile:
    """Read a binary PGM (P5) or PPM (P6) file; values are scaled to [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r} at byte 0 (expected P5 or P6)")
    tokens, offset = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"non-integer header field before byte {offset}") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"bad header values {width}×{height} maxval {maxval} before byte {offset}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * channels
    need = count * dtype.itemsize
    if len(data) - offset < need:
        raise FormatError(f"payload truncated: need {need} bytes from byte {offset}, have {len(data) - offset}")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    if raw.max(initial=0) > maxval:
        raise FormatError(f"pixel value exceeds maxval {maxval}")
    pixels = raw.astype(np.float64) / maxval
    if channels == 3:
        pixels = pixels.reshape(height, width, 3).transpose(2, 0, 1).copy()
    else:
        pixels = pixels.reshape(height, width)
    return ImageFile(pixels, 16 if maxval > 255 else 8)


def quantize(img) -> np.ndarray:
    """Clamp to [0, 1] and round half-up to 8-bit."""
    x = np.clip(as_tensor(img), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path) -> None:
    """Write a grayscale H×W (or 1×H×W) image as 8-bit P5, or 3×H×W as P6."""
    img = as_tensor(img)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 2:
        h, w = img.shape
        magic, payload = b"P5", quantize(img)
    elif img.ndim == 3 and img.shape[0] == 3:
        _, h, w = img.shape
        magic, payload = b"P6", quantize(img.transpose(1, 2, 0))
    else:
        raise ShapeError(f"save_image: expected H×W or 3×H×W, got {img.shape}")
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode())
        f.write(payload.tobytes())


# --------------------------------------------------------------------------
# matrices


def save_matrix(m, path) -> None:
    m = np.ascontiguousarray(as_tensor(m))
    header = MATRIX_MAGIC + struct.pack("<I", m.ndim) + struct.pack(f"<{m.ndim}Q", *m.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(m.astype("<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MATRIX_MAGIC:
        raise FormatError(f"bad matrix magic {data[:4]!r}")
    if len(data) < 8:
        raise FormatError("truncated matrix header")
    (rank,) = struct.unpack_from("<I", data, 4)
    end = 8 + 8 * rank
    if len(data) < end:
        raise FormatError(f"truncated dims: rank {rank} needs {end} header bytes, file has {len(data)}")
    dims = struct.unpack_from(f"<{rank}Q", data, 8)
    count = math.prod(dims)
    if len(data) != end + 8 * count:
        raise FormatError(f"payload size {len(data) - end} does not match dims {dims}")
    return np.frombuffer(data, dtype="<f8", count=count, offset=end).astype(np.float64).reshape(dims)


# --------------------------------------------------------------------------
# parameters

_PARAMS_RE = re.compile(rf"{PARAMS_TAG} v1 spec=([0-9a-f]{{16}}) length=(\d+)")


def save_params(params: ParamVector, spec: NetSpec, path) -> None:
    header = f"{PARAMS_TAG} v1 spec={spec_hash(spec)} length={len(params)}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(params.values.astype("<f8").tobytes())


def load_params(path, spec: NetSpec) -> ParamVector:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    match = _PARAMS_RE.fullmatch(data[:nl].decode("ascii", "replace")) if nl > 0 else None
    if match is None:
        raise FormatError(f"{path}: not a parameter file")
    digest, length = match.group(1), int(match.group(2))
    if digest != spec_hash(spec):
        raise FormatError(f"{path}: parameters were saved for a different network (spec {digest})")
    payload = data[nl + 1 :]
    if len(payload) != 8 * length:
        raise FormatError(f"{path}: expected {length} values, found {len(payload) / 8:g}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return ParamVector(values, layout_for(spec))


# --------------------------------------------------------------------------
# traces


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iter", "loss", "psnr"])
        for r in trace.records:
            w.writerow([r.iter, _fmt(r.loss), _fmt(r.psnr)])


def read_trace_csv(path) -> TrainingTrace:
    trace = TrainingTrace()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["iter", "loss", "psnr"]:
            raise FormatError(f"{path}: unexpected trace header {header}")
        for row in reader:
            if len(row) != 3:
                raise FormatError(f"{path}: malformed row {row}")
            trace.append(int(row[0]), float(row[1]), float(row[2]) if row[2] else None)
    return trace


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else ("" if v is None else v) for v in row])

"""Pixel plumbing: rasters, PNG/PGM codecs, domain transforms, warps, morphology.

Conventions used across the package:

- Raster8 holds 8-bit pixels, shape (H, W, C) with C in {1, 3, 4}.
- Working images ("diffusion domain") are float64 arrays (H, W, C), C in
  {1, 3}, nominally in [-1, 1]; masks are float64 (H, W) in [0, 1].
- Geometric resampling is bilinear.  Warps use the numpy pad "reflect"
  border (edge sample not repeated); resize clamps at the border.
- Every linear resampling op (warp, resize) exposes its exact adjoint so
  analytic gradients can be chained through it.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Raster8",
    "ImageFormatError",
    "decode_image",
    "encode_image",
    "decode_png",
    "encode_png",
    "decode_pgm",
    "encode_pgm",
    "split_alpha",
    "mask_from_raster",
    "raster_from_mask",
    "to_diffusion_domain",
    "from_diffusion_domain",
    "blend",
    "ProjectiveTransform",
    "homography_from_corners",
    "random_projective",
    "warp_projective",
    "warp_adjoint",
    "warp_mask",
    "resize",
    "resize_adjoint",
    "dilate",
]

_PNG_SIG = b"\x89PNG\r\n\x1a\n"
# color type -> channel count we accept for 8-bit PNGs
_PNG_COLOR_CHANNELS = {0: 1, 2: 3, 6: 4}
_PNG_CHANNEL_COLOR = {1: 0, 3: 2, 4: 6}


class ImageFormatError(ValueError):
    """Malformed image file; offset is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class Raster8:
    """8-bit raster; data is a uint8 array of shape (height, width, channels)."""

    height: int
    width: int
    channels: int
    data: np.ndarray

    @staticmethod
    def from_array(arr: np.ndarray) -> "Raster8":
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3, 4):
            raise ValueError(f"raster must be (H, W, C) with C in {{1,3,4}}, got {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"raster dtype must be uint8, got {arr.dtype}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"raster must be non-empty, got shape {arr.shape}")
        return Raster8(arr.shape[0], arr.shape[1], arr.shape[2], np.ascontiguousarray(arr))


# ----- PNG -----


def _read_chunk(data: bytes, pos: int):
    if pos + 8 > len(data):
        raise ImageFormatError("truncated chunk header", pos)
    (length,) = struct.unpack(">I", data[pos : pos + 4])
    ctype = data[pos + 4 : pos + 8]
    body_at = pos + 8
    if body_at + length + 4 > len(data):
        raise ImageFormatError(f"truncated {ctype!r} chunk", pos)
    body = data[body_at : body_at + length]
    (crc,) = struct.unpack(">I", data[body_at + length : body_at + length + 4])
    if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
        raise ImageFormatError(f"bad CRC for {ctype!r} chunk", body_at + length)
    return ctype, body, body_at + length + 4


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: np.ndarray, height: int, width: int, channels: int) -> np.ndarray:
    stride = width * channels
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for r in range(height):
        ftype = int(raw[r, 0])
        line = raw[r, 1:].astype(np.int64)
        if ftype == 0:
            rec = line
        elif ftype == 1:  # Sub: prefix sum per channel lane
            lanes = line.reshape(width, channels)
            rec = np.cumsum(lanes, axis=0).reshape(stride) % 256
        elif ftype == 2:  # Up
            rec = (line + prev) % 256
        elif ftype == 3:  # Average
            rec = np.zeros(stride, dtype=np.int64)
            for i in range(stride):
                left = rec[i - channels] if i >= channels else 0
                rec[i] = (line[i] + (left + int(prev[i])) // 2) % 256
        elif ftype == 4:  # Paeth
            rec = np.zeros(stride, dtype=np.int64)
            for i in range(stride):
                left = rec[i - channels] if i >= channels else 0
                up = int(prev[i])
                ul = int(prev[i - channels]) if i >= channels else 0
                rec[i] = (line[i] + _paeth(int(left), up, ul)) % 256
        else:
            raise ImageFormatError(f"unknown scanline filter {ftype} in row {r}")
        out[r] = rec.astype(np.uint8)
        prev = out[r]
    return out.reshape(height, width, channels)


def decode_png(data: bytes) -> Raster8:
    """Decode an 8-bit non-interlaced gray/RGB/RGBA PNG."""
    if len(data) < 8 or data[:8] != _PNG_SIG:
        raise ImageFormatError("not a PNG (bad signature)", 0)
    pos = 8
    ctype, body, pos = _read_chunk(data, pos)
    if ctype != b"IHDR" or len(body) != 13:
        raise ImageFormatError("first chunk is not a valid IHDR", 8)
    width, height, depth, color, comp, filt, interlace = struct.unpack(
        ">IIBBBBB", body
    )
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad dimensions {width}x{height}", 16)
    if depth != 8:
        raise ImageFormatError(f"unsupported bit depth {depth}", 24)
    if color not in _PNG_COLOR_CHANNELS:
        raise ImageFormatError(f"unsupported color type {color}", 25)
    if comp != 0 or filt != 0:
        raise ImageFormatError("unsupported compression/filter method", 26)
    if interlace != 0:
        raise ImageFormatError("interlaced PNGs are not supported", 28)
    channels = _PNG_COLOR_CHANNELS[color]

    idat = b""
    seen_end = False
    while pos < len(data):
        at = pos
        ctype, body, pos = _read_chunk(data, pos)
        if ctype == b"IDAT":
            idat += body
        elif ctype == b"IEND":
            seen_end = True
            break
        elif ctype in (b"IHDR",):
            raise ImageFormatError("duplicate IHDR", at)
        # ancillary chunks are skipped
    if not seen_end:
        raise ImageFormatError("missing IEND chunk", len(data))
    if not idat:
        raise ImageFormatError("no IDAT data", len(data))
    try:
        raw = zlib.decompress(idat)
    except zlib.error as exc:
        raise ImageFormatError(f"IDAT inflate failed: {exc}", 8) from exc
    stride = width * channels
    expect = height * (stride + 1)
    if len(raw) != expect:
        raise ImageFormatError(
            f"decompressed size {len(raw)} != expected {expect}", 8
        )
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(height, stride + 1)
    return Raster8.from_array(_unfilter(rows, height, width, channels))


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return (
        struct.pack(">I", len(body))
        + ctype
        + body
        + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)
    )


def encode_png(raster: Raster8) -> bytes:
    """Encode as 8-bit PNG (filter 0 rows, fixed zlib level: deterministic)."""
    if raster.channels not in _PNG_CHANNEL_COLOR:
        raise ValueError(f"cannot encode {raster.channels}-channel raster as PNG")
    color = _PNG_CHANNEL_COLOR[raster.channels]
    ihdr = struct.pack(">IIBBBBB", raster.width, raster.height, 8, color, 0, 0, 0)
    rows = raster.data.reshape(raster.height, raster.width * raster.channels)
    raw = b"".join(b"\x00" + rows[r].tobytes() for r in range(raster.height))
    return (
        _PNG_SIG
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(raw, 9))
        + _chunk(b"IEND", b"")
    )


# ----- PGM (P5) -----


def decode_pgm(data: bytes) -> Raster8:
    """Decode a binary PGM (P5, maxval 255) into a 1-channel raster."""
    if data[:2] != b"P5":
        raise ImageFormatError("not a binary PGM (missing P5 magic)", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PGM header", start)
        token = data[start:pos]
        if not token.isdigit():
            raise ImageFormatError(f"bad PGM header token {token!r}", start)
        fields.append(int(token))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError("missing whitespace after maxval", pos)
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad dimensions {width}x{height}", 2)
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}", 2)
    need = width * height
    if len(data) - pos < need:
        raise ImageFormatError(
            f"pixel data truncated, need {need} bytes have {len(data) - pos}", pos
        )
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return Raster8.from_array(pixels.reshape(height, width, 1))


def encode_pgm(raster: Raster8) -> bytes:
    if raster.channels != 1:
        raise ValueError("PGM stores single-channel rasters only")
    header = f"P5\n{raster.width} {raster.height}\n255\n".encode("ascii")
    return header + raster.data.tobytes()


def decode_image(data: bytes, fmt: str) -> Raster8:
    if fmt == "png":
        return decode_png(data)
    if fmt == "pgm":
        return decode_pgm(data)
    raise ValueError(f"unknown image format {fmt!r}")


def encode_image(raster: Raster8, fmt: str) -> bytes:
    if fmt == "png":
        return encode_png(raster)
    if fmt == "pgm":
        return encode_pgm(raster)
    raise ValueError(f"unknown image format {fmt!r}")


def split_alpha(raster: Raster8) -> tuple[Raster8, np.ndarray]:
    """Split an RGBA raster into RGB and a {0,1} mask (alpha >= 128)."""
    if raster.channels != 4:
        raise ValueError("split_alpha needs a 4-channel raster")
    rgb = Raster8.from_array(raster.data[:, :, :3].copy())
    mask = (raster.data[:, :, 3] >= 128).astype(np.float64)
    return rgb, mask


def mask_from_raster(raster: Raster8) -> np.ndarray:
    """Single-channel raster -> {0,1} mask via the >= 128 threshold."""
    if raster.channels == 4:
        return split_alpha(raster)[1]
    if raster.channels != 1:
        raise ValueError("masks on disk must be single-channel (or RGBA alpha)")
    return (raster.data[:, :, 0] >= 128).astype(np.float64)


def raster_from_mask(mask: np.ndarray) -> Raster8:
    mask = np.asarray(mask, dtype=np.float64)
    return Raster8.from_array((np.clip(mask, 0.0, 1.0) * 255.0).round().astype(np.uint8))


# ----- value domain -----


def to_diffusion_domain(raster: Raster8) -> np.ndarray:
    """uint8 [0, 255] -> float64 [-1, 1] via v = u / 127.5 - 1."""
    if raster.channels not in (1, 3):
        raise ValueError("convert RGBA rasters with split_alpha first")
    return raster.data.astype(np.float64) / 127.5 - 1.0


def from_diffusion_domain(image: np.ndarray) -> Raster8:
    """Clamp to [-1, 1] and quantize back with u = round((v + 1) * 127.5)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, C) with C in {{1,3}}, got {image.shape}")
    v = np.clip(image, -1.0, 1.0)
    u = np.rint((v + 1.0) * 127.5)
    return Raster8.from_array(np.clip(u, 0.0, 255.0).astype(np.uint8))


def blend(fg: np.ndarray, bg: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """fg * mask + bg * (1 - mask), mask broadcast over channels.

    Where mask == 0 the result equals bg bit-exactly, and where mask == 1
    it equals fg bit-exactly (finite inputs).
    """
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if fg.shape != bg.shape:
        raise ValueError(f"fg shape {fg.shape} != bg shape {bg.shape}")
    if mask.shape != fg.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != image plane {fg.shape[:2]}")
    m = mask[:, :, None]
    return fg * m + bg * (1.0 - m)


# ----- projective geometry -----


@dataclass(frozen=True)
class ProjectiveTransform:
    """3x3 homography acting on (x, y, 1) pixel coordinates (x = column)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        det = np.linalg.det(m)
        if not np.isfinite(det) or abs(det) < 1e-12:
            raise ValueError("homography is singular")
        m = m / m[2, 2] if abs(m[2, 2]) > 1e-12 else m
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity() -> "ProjectiveTransform":
        return ProjectiveTransform(np.eye(3))

    def inverse(self) -> "ProjectiveTransform":
        return ProjectiveTransform(np.linalg.inv(self.matrix))

    def is_identity(self) -> bool:
        return bool(np.allclose(self.matrix, np.eye(3), atol=1e-12))


def homography_from_corners(src, dst) -> ProjectiveTransform:
    """Direct linear transform from 4 (x, y) correspondences src -> dst."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("need exactly 4 source and 4 destination points")
    A = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    h = np.linalg.solve(A, b)
    m = np.append(h, 1.0).reshape(3, 3)
    return ProjectiveTransform(m)


def random_projective(
    height: int,
    width: int,
    rng: np.random.Generator,
    jitter: float = 0.1,
    max_tries: int = 10,
) -> ProjectiveTransform:
    """Corner-jitter homography: each corner moves by U(-jitter, jitter) * side.

    Draw order is fixed (corners TL, TR, BR, BL; dx then dy per corner) so a
    seeded generator yields a reproducible transform list.  Degenerate draws
    are redrawn, at most max_tries times.
    """
    corners = np.array(
        [[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]]
    )
    scale = np.array([jitter * width, jitter * height])
    for _ in range(max_tries):
        offsets = rng.uniform(-1.0, 1.0, size=(4, 2)) * scale
        try:
            return homography_from_corners(corners, corners + offsets)
        except (ValueError, np.linalg.LinAlgError):
            continue
    raise RuntimeError(f"no invertible corner-jitter homography after {max_tries} draws")


def _reflect_coords(c: np.ndarray, n: int) -> np.ndarray:
    """Map continuous coordinates into [0, n-1] by mirror reflection
    (numpy pad 'reflect' convention: the edge sample is the pivot)."""
    if n == 1:
        return np.zeros_like(c)
    period = 2.0 * (n - 1)
    c = np.abs(c) % period
    return np.where(c > n - 1, period - c, c)


def _gather_plan(rows: np.ndarray, cols: np.ndarray, h: int, w: int, border: str):
    """Bilinear sampling plan at continuous (row, col) positions.

    Returns flat indices (4, N) into an (h, w) plane and weights (4, N)
    summing to 1, shared by the forward gather and its adjoint scatter.
    """
    if border == "reflect":
        rows = _reflect_coords(rows, h)
        cols = _reflect_coords(cols, w)
    elif border == "clamp":
        rows = np.clip(rows, 0.0, h - 1.0)
        cols = np.clip(cols, 0.0, w - 1.0)
    else:
        raise ValueError(f"unknown border mode {border!r}")
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r0 = np.clip(r0, 0, h - 1)
    c0 = np.clip(c0, 0, w - 1)
    fr = rows - r0
    fc = cols - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    idx = np.stack(
        [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1]
    )
    wts = np.stack(
        [(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc]
    )
    return idx, wts


def _warp_plan(transform: ProjectiveTransform, h: int, w: int):
    inv = np.linalg.inv(transform.matrix)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    ones = np.ones_like(xs)
    coords = np.stack([xs.ravel(), ys.ravel(), ones.ravel()])
    mapped = inv @ coords
    zs = mapped[2]
    if np.any(~np.isfinite(mapped)) or np.any(np.abs(zs) < 1e-9):
        raise ValueError("homography maps pixels through the plane at infinity")
    sx = mapped[0] / zs
    sy = mapped[1] / zs
    return _gather_plan(sy, sx, h, w, border="reflect")


def _gather(plane: np.ndarray, idx: np.ndarray, wts: np.ndarray, h: int, w: int) -> np.ndarray:
    flat = plane.reshape(-1)
    out = (flat[idx] * wts).sum(axis=0)
    return out.reshape(h, w)


def _scatter(grad: np.ndarray, idx: np.ndarray, wts: np.ndarray, h: int, w: int) -> np.ndarray:
    g = grad.reshape(-1)
    out = np.bincount(idx.reshape(-1), weights=(wts * g).reshape(-1), minlength=h * w)
    return out.reshape(h, w)


def warp_projective(image: np.ndarray, transform: ProjectiveTransform) -> np.ndarray:
    """Warp by inverse mapping: out(p) = in(H^-1 p), bilinear, reflect border.

    The identity transform reproduces the input exactly, and outputs stay
    within [min(input), max(input)] because the weights are convex.
    """
    image = np.asarray(image, dtype=np.float64)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    h, w, c = image.shape
    idx, wts = _warp_plan(transform, h, w)
    out = np.stack([_gather(image[:, :, ch], idx, wts, h, w) for ch in range(c)], axis=-1)
    return out[:, :, 0] if squeeze else out


def warp_adjoint(grad: np.ndarray, transform: ProjectiveTransform) -> np.ndarray:
    """Exact adjoint of warp_projective: splats grad back along the inverse map.

    Satisfies <warp(x), g> == <x, warp_adjoint(g)> to rounding error, which
    is what chaining analytic gradients through a warp requires.
    """
    grad = np.asarray(grad, dtype=np.float64)
    squeeze = grad.ndim == 2
    if squeeze:
        grad = grad[:, :, None]
    h, w, c = grad.shape
    idx, wts = _warp_plan(transform, h, w)
    out = np.stack([_scatter(grad[:, :, ch], idx, wts, h, w) for ch in range(c)], axis=-1)
    return out[:, :, 0] if squeeze else out


def warp_mask(mask: np.ndarray, transform: ProjectiveTransform) -> np.ndarray:
    """Warp a mask and re-threshold at 0.5 so it stays binary."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    warped = warp_projective(mask, transform)
    return (warped >= 0.5).astype(np.float64)


# ----- resize -----


def _resize_plan(src_h: int, src_w: int, out_h: int, out_w: int):
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (src_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (src_w / out_w) - 0.5
    rows, cols = np.meshgrid(ys, xs, indexing="ij")
    return _gather_plan(rows.ravel(), cols.ravel(), src_h, src_w, border="clamp")


def resize(image: np.ndarray, out_h: int, out_w: int, mode: str = "bilinear") -> np.ndarray:
    """Resize an (H, W[, C]) array.

    bilinear: half-pixel-center sampling, clamped at the border; a same-size
    resize is exactly the identity.  area: average pooling, requiring integer
    downsampling factors.
    """
    image = np.asarray(image, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size {out_h}x{out_w}")
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    h, w, c = image.shape
    if mode == "bilinear":
        if (out_h, out_w) == (h, w):
            out = image.copy()
        else:
            idx, wts = _resize_plan(h, w, out_h, out_w)
            flat = image.reshape(h * w, c)
            out = np.einsum("kn,knc->nc", wts, flat[idx]).reshape(out_h, out_w, c)
    elif mode == "area":
        if h % out_h or w % out_w:
            raise ValueError(
                f"area resize needs integer factors, got {h}x{w} -> {out_h}x{out_w}"
            )
        fh, fw = h // out_h, w // out_w
        out = image.reshape(out_h, fh, out_w, fw, c).mean(axis=(1, 3))
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    return out[:, :, 0] if squeeze else out


def resize_adjoint(grad: np.ndarray, src_h: int, src_w: int) -> np.ndarray:
    """Adjoint of bilinear resize from (src_h, src_w) to grad's shape."""
    grad = np.asarray(grad, dtype=np.float64)
    squeeze = grad.ndim == 2
    if squeeze:
        grad = grad[:, :, None]
    out_h, out_w, c = grad.shape
    if (out_h, out_w) == (src_h, src_w):
        out = grad.copy()
    else:
        idx, wts = _resize_plan(src_h, src_w, out_h, out_w)
        out = np.stack(
            [_scatter(grad[:, :, ch], idx, wts, src_h, src_w) for ch in range(c)],
            axis=-1,
        )
    return out[:, :, 0] if squeeze else out


# ----- morphology -----


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Max-filter with a disc: offsets with dx^2 + dy^2 <= (radius + 0.5)^2.

    radius 0 is the identity; radius 1 covers the full 3x3 neighborhood.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return mask.copy()
    h, w = mask.shape
    limit = (radius + 0.5) ** 2
    out = np.zeros_like(mask)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy * dy + dx * dx > limit:
                continue
            src_r0, src_r1 = max(0, -dy), min(h, h - dy)
            dst_r0, dst_r1 = max(0, dy), min(h, h + dy)
            src_c0, src_c1 = max(0, -dx), min(w, w - dx)
            dst_c0, dst_c1 = max(0, dx), min(w, w + dx)
            np.maximum(
                out[dst_r0:dst_r1, dst_c0:dst_c1],
                mask[src_r0:src_r1, src_c0:src_c1],
                out=out[dst_r0:dst_r1, dst_c0:dst_c1],
            )
    return out

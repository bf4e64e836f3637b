"""File formats and synthetic data: PGM/PPM images, raw k-space blobs,
sampling-mask files, CSV result tables, and deterministic test images."""

from __future__ import annotations

import struct

import numpy as np

from .operators import KSpaceMask

KSPACE_MAGIC = b"KSPC"


class FormatError(ValueError):
    pass


# --- netpbm images ------------------------------------------------------------

def _read_header_tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens, skipping
    '#' comments; returns (tokens, payload offset)."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise FormatError("truncated image header")
        ch = data[i:i + 1]
        if ch == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= len(data) or not data[i:i + 1].isspace():
        raise FormatError("malformed image header")
    return tokens, i + 1  # single whitespace separates header from payload


def load_image(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file into floats in [0, 1].

    Grayscale images come back as (h, w); color as (h, w, 3). Sixteen-bit
    samples (maxval > 255) are big-endian per the netpbm convention."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    color = data[:2] == b"P6"
    tokens, off = _read_header_tokens(data, 4)
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if w < 1 or h < 1:
        raise FormatError(f"{path}: bad dimensions {w}x{h}")
    if maxval not in (255, 65535):
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    channels = 3 if color else 1
    itemsize = 1 if maxval == 255 else 2
    need = w * h * channels * itemsize
    payload = data[off:]
    if len(payload) != need:
        raise FormatError(
            f"{path}: expected {need} payload bytes, found {len(payload)}")
    dtype = np.uint8 if maxval == 255 else ">u2"
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float64) / maxval
    arr = arr.reshape((h, w) if not color else (h, w, 3))
    return arr


def save_image(path, image: np.ndarray, maxval: int = 255):
    """Write floats in [0, 1] as binary PGM/PPM; values are rounded to the
    maxval grid, so saving an already-quantized image round-trips exactly."""
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        magic, channels = b"P5", 1
    elif img.ndim == 3 and img.shape[2] == 3:
        magic, channels = b"P6", 3
    else:
        raise ValueError(f"image shape {img.shape} is not (h, w) or (h, w, 3)")
    q = np.clip(np.rint(img * maxval), 0, maxval)
    data = q.astype(np.uint8 if maxval == 255 else ">u2").tobytes()
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(data)


# --- k-space blobs --------------------------------------------------------------

def save_kspace(path, kspace: np.ndarray):
    """Write a complex (h, w) array as magic 'KSPC', u32 height, u32 width
    (little-endian), then row-major (real, imag) float64 pairs."""
    k = np.asarray(kspace)
    if k.ndim != 2:
        raise ValueError("k-space data must be a 2-d array")
    if not np.all(np.isfinite(k.real)) or not np.all(np.isfinite(k.imag)):
        raise ValueError("k-space samples must be finite")
    h, w = k.shape
    inter = np.empty(2 * h * w)
    inter[0::2] = k.real.reshape(-1)
    inter[1::2] = k.imag.reshape(-1)
    with open(path, "wb") as fh:
        fh.write(KSPACE_MAGIC + struct.pack("<II", h, w))
        fh.write(inter.astype("<f8").tobytes())


def load_kspace(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != KSPACE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    h, w = struct.unpack("<II", data[4:12])
    need = 12 + 16 * h * w
    if len(data) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(data)}")
    inter = np.frombuffer(data[12:], dtype="<f8")
    k = inter[0::2].reshape(h, w) + 1j * inter[1::2].reshape(h, w)
    if not np.all(np.isfinite(inter)):
        raise FormatError(f"{path}: non-finite samples")
    return k


def kspace_of(image: np.ndarray) -> np.ndarray:
    """Unitary 2-d DFT of a real image."""
    img = np.asarray(image, dtype=np.float64)
    return np.fft.fft2(img) / np.sqrt(img.size)


def image_of_kspace(kspace: np.ndarray) -> np.ndarray:
    """Magnitude of the unitary inverse DFT (the fully-sampled reference)."""
    return np.abs(np.fft.ifft2(kspace) * np.sqrt(kspace.size))


# --- mask files -----------------------------------------------------------------

def save_mask(path, mask: KSpaceMask):
    lines = [f"{mask.width} {mask.acceleration} {mask.center_fraction!r} {mask.seed}"]
    lines += [str(int(v)) for v in mask.keep]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mask(path) -> KSpaceMask:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty mask file")
    head = lines[0].split()
    if len(head) != 4:
        raise FormatError(f"{path}: malformed mask header {lines[0]!r}")
    width, acceleration = int(head[0]), int(head[1])
    center_fraction, seed = float(head[2]), int(head[3])
    body = [ln.strip() for ln in lines[1:] if ln.strip()]
    if len(body) != width:
        raise FormatError(f"{path}: expected {width} mask rows, found {len(body)}")
    keep = np.array([int(v) for v in body], dtype=np.uint8)
    if not np.all((keep == 0) | (keep == 1)):
        raise FormatError(f"{path}: mask entries must be 0 or 1")
    return KSpaceMask(width=width, keep=keep, acceleration=acceleration,
                      center_fraction=center_fraction, seed=seed)


# --- synthetic images -----------------------------------------------------------

# (intensity, semi-axis a, semi-axis b, center x, center y, rotation degrees)
_PHANTOM_ELLIPSES = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


def phantom(h: int, w: int) -> np.ndarray:
    """Deterministic head-phantom test image in [0, 1].

    Classic overlapping ellipses modulated by a smooth intensity gradient,
    so the image has both sharp boundaries and the slowly varying shading
    real magnitude images show."""
    ys = np.linspace(-1.0, 1.0, h)[:, None]
    xs = np.linspace(-1.0, 1.0, w)[None, :]
    img = np.zeros((h, w))
    for amp, a, b, x0, y0, phi_deg in _PHANTOM_ELLIPSES:
        phi = np.deg2rad(phi_deg)
        xr = (xs - x0) * np.cos(phi) + (ys - y0) * np.sin(phi)
        yr = -(xs - x0) * np.sin(phi) + (ys - y0) * np.cos(phi)
        img += amp * ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0)
    img = np.clip(img, 0.0, None)
    shade = 0.75 + 0.25 * np.exp(-((xs - 0.25) ** 2 + (ys + 0.3) ** 2))
    img = img * shade
    top = img.max()
    return img / top if top > 0 else img


def smooth_image(h: int, w: int) -> np.ndarray:
    """Deterministic smooth test image in (0, 1): a few low-frequency modes."""
    ys = np.linspace(0.0, 1.0, h)[:, None]
    xs = np.linspace(0.0, 1.0, w)[None, :]
    img = (0.5
           + 0.22 * np.sin(2 * np.pi * xs) * np.cos(np.pi * ys)
           + 0.15 * np.cos(3 * np.pi * (xs + ys) + 0.4)
           + 0.08 * np.sin(5 * np.pi * xs * ys))
    return np.clip(img, 0.02, 0.98)


# --- CSV ------------------------------------------------------------------------

def format_number(v) -> str:
    """Locale-independent numeric formatting ('.' decimal separator)."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header, rows):
    """Write rows of numbers/strings under a fixed header."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else format_number(v)
                              for v in row) + "\n")

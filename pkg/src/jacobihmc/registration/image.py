"""Grayscale images, binary PGM I/O and bilinear sampling."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PGMError(ValueError):
    pass


@dataclass(frozen=True)
class ImageGrid:
    """Intensities in [0, 1] stored as a (height, width) array; x is the column index."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("image data must be a non-empty 2-d array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def pixel_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-major (x, y) coordinates of every pixel."""
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return xs.ravel().astype(float), ys.ravel().astype(float)


def _tokens(data: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PGMError("truncated header")
        out.append(data[start:pos])
    return out, pos


def read_pgm(path) -> ImageGrid:
    """Read a binary (P5) PGM, mapping intensities to [0, 1]."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(data, 4, 0)
    if magic != b"P5":
        raise PGMError(f"unsupported PGM magic {magic!r}")
    width, height, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise PGMError(f"bad maxval {maxval}")
    pos += 1  # single whitespace before the raster
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return ImageGrid(raster.reshape(height, width).astype(float) / maxval)


def write_pgm(path, image: ImageGrid) -> None:
    """Write an 8-bit P5 PGM; values are clipped to [0, 1]."""
    raster = np.round(np.clip(image.data, 0.0, 1.0) * 255).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raster.tobytes())


def bilinear_sample(image: ImageGrid, x, y, with_gradient: bool = False):
    """Sample at real coordinates; points outside [0, W-1] x [0, H-1] give 0.

    Returns (values, mask) or (values, gx, gy, mask). The gradient is the exact
    derivative of the bilinear interpolant, taken from the cell to the lower
    right at cell boundaries.
    """
    img = image.data
    h, w = img.shape
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    x0 = np.clip(np.floor(x), 0, max(w - 2, 0)).astype(int)
    y0 = np.clip(np.floor(y), 0, max(h - 2, 0)).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.where(mask, x - x0, 0.0)
    fy = np.where(mask, y - y0, 0.0)
    v00, v10 = img[y0, x0], img[y0, x1]
    v01, v11 = img[y1, x0], img[y1, x1]
    # convex weights reproduce grid values exactly when fx or fy is 0 or 1
    top = (1.0 - fx) * v00 + fx * v10
    bottom = (1.0 - fx) * v01 + fx * v11
    vals = np.where(mask, (1.0 - fy) * top + fy * bottom, 0.0)
    if not with_gradient:
        return vals, mask
    gx = (v10 - v00) + fy * ((v11 - v01) - (v10 - v00))
    gy = bottom - top
    gx = np.where(mask, gx, 0.0)
    gy = np.where(mask, gy, 0.0)
    return vals, gx, gy, mask


def gaussian_blobs(width: int, height: int, centers, sigma: float, amplitude: float = 1.0) -> ImageGrid:
    """Sum of isotropic Gaussian bumps, clipped to [0, 1]."""
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    img = np.zeros((height, width))
    for cx, cy in centers:
        img += amplitude * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma**2))
    return ImageGrid(np.clip(img, 0.0, 1.0))


def linear_ramp(width: int, height: int, slope: float = None) -> ImageGrid:
    """Intensity growing linearly along x from 0 to 1."""
    slope = 1.0 / max(width - 1, 1) if slope is None else slope
    row = np.clip(np.arange(width) * slope, 0.0, 1.0)
    return ImageGrid(np.tile(row, (height, 1)))


def blob_pair(width: int = 64, height: int = 64, shift: float = 3.0, sigma: float = 6.0) -> tuple[ImageGrid, ImageGrid]:
    """Synthetic (fixed, moving) pair: a column of blobs translated by ``shift`` px along x."""
    cx = width / 2.0
    rows = np.linspace(0.3, 0.7, 3) * height
    fixed = gaussian_blobs(width, height, [(cx, r) for r in rows], sigma)
    moving = gaussian_blobs(width, height, [(cx + shift, r) for r in rows], sigma)
    return fixed, moving

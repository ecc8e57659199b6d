"""Grayscale voxel images: PGM I/O, Gaussian smoothing, binarization and a synthetic fibre fixture."""

import math
import os

import numpy as np
from loguru import logger
from scipy import ndimage

from services.material import VoxelGrid

from .exceptions import PgmFormatError
from .functions import ensure_directory

_WHITESPACE = b" \t\r\n\v\f"


class _HeaderReader:
    """Token reader over the PGM header, skipping whitespace and # comments."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def token(self, what: str) -> bytes:
        data = self.data
        while self.offset < len(data):
            if data[self.offset] in _WHITESPACE:
                self.offset += 1
            elif data[self.offset : self.offset + 1] == b"#":
                end = data.find(b"\n", self.offset)
                self.offset = len(data) if end < 0 else end + 1
            else:
                break
        start = self.offset
        while self.offset < len(data) and data[self.offset] not in _WHITESPACE and data[self.offset : self.offset + 1] != b"#":
            self.offset += 1
        if start == self.offset:
            raise PgmFormatError(f"Missing {what}", start)
        return data[start : self.offset]

    def integer(self, what: str) -> int:
        start = self.offset
        token = self.token(what)
        if not token.isdigit():
            raise PgmFormatError(f"Invalid {what} {token!r}", start)
        return int(token)


def parse_pgm(data: bytes, pixel_size: float = 1.0) -> VoxelGrid:
    reader = _HeaderReader(data)
    magic = reader.token("magic number")
    if magic not in (b"P2", b"P5"):
        raise PgmFormatError(f"Unsupported magic number {magic!r}", 0)
    width = reader.integer("width")
    height = reader.integer("height")
    maxval = reader.integer("maxval")
    if width < 1 or height < 1:
        raise PgmFormatError("Image dimensions must be positive", reader.offset)
    if not 0 < maxval <= 65535:
        raise PgmFormatError(f"maxval {maxval} out of range", reader.offset)
    count = width * height

    if magic == b"P2":
        values = np.empty(count, dtype=np.float64)
        for index in range(count):
            start = reader.offset
            try:
                sample = reader.integer("sample")
            except PgmFormatError as e:
                raise PgmFormatError(f"Truncated payload after {index} of {count} samples", e.offset) from e
            if sample > maxval:
                raise PgmFormatError(f"Sample {sample} exceeds maxval {maxval}", start)
            values[index] = sample
    else:
        # Exactly one whitespace byte separates the header from the raster
        payload_start = reader.offset + 1
        bytes_per_sample = 1 if maxval < 256 else 2
        expected = count * bytes_per_sample
        payload = data[payload_start : payload_start + expected]
        if len(payload) < expected:
            raise PgmFormatError(
                f"Truncated payload: {len(payload)} of {expected} bytes", payload_start + len(payload)
            )
        dtype = np.uint8 if bytes_per_sample == 1 else np.dtype(">u2")
        values = np.frombuffer(payload, dtype=dtype).astype(np.float64)
        if values.max(initial=0) > maxval:
            raise PgmFormatError(f"Sample exceeds maxval {maxval}", payload_start)

    return VoxelGrid(width, height, values / maxval, pixel_size)


def load_grayscale_pgm(path: str, pixel_size: float = 1.0) -> VoxelGrid:
    """Read a P2 or P5 image normalized to [0, 1], top row first."""
    logger.info(f"[Imaging] Reading {path}")
    with open(path, "rb") as file:
        data = file.read()
    grid = parse_pgm(data, pixel_size)
    logger.debug(f"[Imaging] {grid.width}x{grid.height} image loaded")
    return grid


def write_pgm(path: str, grid: VoxelGrid, maxval: int = 255, binary: bool = True) -> None:
    """Write P5 (or P2) with 8 or 16 bit samples depending on maxval."""
    if not 0 < maxval <= 65535:
        raise ValueError(f"maxval {maxval} out of range")
    directory = os.path.dirname(os.path.abspath(path))
    ensure_directory(directory)
    samples = np.rint(np.clip(grid.values, 0.0, 1.0) * maxval).astype(np.int64)
    header = f"{'P5' if binary else 'P2'}\n{grid.width} {grid.height}\n{maxval}\n".encode("ascii")

    with open(path, "wb") as file:
        file.write(header)
        if binary:
            dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
            file.write(samples.astype(dtype).tobytes())
        else:
            rows = samples.reshape(grid.height, grid.width)
            file.write("\n".join(" ".join(str(v) for v in row) for row in rows).encode("ascii") + b"\n")


def gaussian_filter(grid: VoxelGrid, sigma_px: float) -> VoxelGrid:
    """Separable Gaussian blur, kernel radius ceil(3 sigma), reflected edges."""
    if not sigma_px > 0.0:
        raise ValueError("sigma_px must be positive")
    radius = math.ceil(3.0 * sigma_px)
    smoothed = ndimage.gaussian_filter(grid.as_image(), sigma=sigma_px, mode="reflect", radius=radius)
    return VoxelGrid(grid.width, grid.height, np.clip(smoothed, 0.0, 1.0), grid.pixel_size)


def binarize(grid: VoxelGrid, threshold: float = 0.5) -> VoxelGrid:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return VoxelGrid(grid.width, grid.height, (grid.values >= threshold).astype(np.float64), grid.pixel_size)


def synthetic_fibers(
    width: int = 64,
    height: int = 64,
    n_fibers: int = 12,
    fiber_length: float = 20.0,
    fiber_width: float = 3.0,
    noise: float = 0.15,
    seed: int = 0,
) -> VoxelGrid:
    """Noisy grayscale image of randomly placed and oriented short fibres."""
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:height, 0:width]
    px = cols + 0.5
    py = rows + 0.5
    image = np.full((height, width), 0.2)

    for _ in range(n_fibers):
        cx, cy = rng.uniform(0.0, width), rng.uniform(0.0, height)
        angle = rng.uniform(0.0, math.pi)
        along = (px - cx) * math.cos(angle) + (py - cy) * math.sin(angle)
        across = -(px - cx) * math.sin(angle) + (py - cy) * math.cos(angle)
        inside = (np.abs(along) <= fiber_length / 2.0) & (np.abs(across) <= fiber_width / 2.0)
        image[inside] = 0.8

    image = np.clip(image + rng.normal(0.0, noise, size=image.shape), 0.0, 1.0)
    logger.debug(f"[Imaging] Synthetic {width}x{height} image with {n_fibers} fibres (seed {seed})")
    return VoxelGrid(width, height, image)


def prepare_microstructure(grid: VoxelGrid, sigma_px: float = 1.0, threshold: float = 0.5) -> VoxelGrid:
    """Gaussian filter followed by binarization."""
    binary = binarize(gaussian_filter(grid, sigma_px), threshold)
    logger.info(f"[Imaging] Inclusion volume fraction {binary.values.mean():.3f}")
    return binary

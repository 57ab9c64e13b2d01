"""Confidence maps, shift kernels and peak extraction.

A confidence map is a ``(height, width)`` grid of non-negative responses for
one joint type.  Cells are addressed as ``(x, y)`` with ``x`` the column and
``y`` the row; values are stored row-major as ``values[y, x]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CMF_MAGIC = "CMF1"
DEFAULT_KERNEL_SIZE = 7


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    values: np.ndarray
    joint_id: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"confidence map must be a non-empty 2D grid, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("confidence map contains non-finite values")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, xy):
        x, y = xy
        return float(self.values[y, x])

    def __eq__(self, other):
        if not isinstance(other, ConfidenceMap):
            return NotImplemented
        return self.joint_id == other.joint_id and np.array_equal(self.values, other.values)

    def __add__(self, other: "ConfidenceMap") -> "ConfidenceMap":
        if self.values.shape != other.values.shape:
            raise ValueError("map dimensions differ")
        return ConfidenceMap(self.values + other.values, self.joint_id)


@dataclass(frozen=True, eq=False)
class TransformKernel:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 != 1:
            raise ValueError(f"kernel must be square with odd size, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel contains non-finite weights")
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def half(self) -> int:
        return self.size // 2


@dataclass(frozen=True)
class Peak:
    position: tuple[int, int]
    value: float
    joint_id: int = 0


def as_stack(maps) -> np.ndarray:
    """Return a ``(J, H, W)`` float64 array from a map stack or a list of maps."""
    if isinstance(maps, np.ndarray):
        stack = maps.astype(np.float64, copy=False)
    else:
        stack = np.stack([m.values if isinstance(m, ConfidenceMap) else np.asarray(m, float)
                          for m in maps])
    if stack.ndim != 3:
        raise ValueError(f"map stack must be 3D (joints, height, width), got {stack.shape}")
    return stack


def render_gaussian(map_dims, center, sigma: float, amplitude: float = 1.0,
                    joint_id: int = 0) -> ConfidenceMap:
    width, height = (int(d) for d in map_dims)
    if width < 1 or height < 1:
        raise ValueError(f"map dims must be positive, got {map_dims}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not amplitude > 0:
        raise ValueError(f"amplitude must be positive, got {amplitude}")
    cx, cy = center
    xs = np.arange(width, dtype=np.float64) - cx
    ys = np.arange(height, dtype=np.float64) - cy
    d2 = ys[:, None] ** 2 + xs[None, :] ** 2
    return ConfidenceMap(amplitude * np.exp(-d2 / (2.0 * sigma * sigma)), joint_id)


def shift_kernel(offset, size: int = DEFAULT_KERNEL_SIZE) -> TransformKernel:
    """Kernel whose convolution translates map content by ``offset = (dx, dy)``."""
    dx, dy = (int(o) for o in offset)
    if size < 1 or size % 2 != 1:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    half = size // 2
    if abs(dx) > half or abs(dy) > half:
        raise ValueError(f"offset {offset} exceeds kernel half-width {half}")
    w = np.zeros((size, size))
    w[half + dy, half + dx] = 1.0
    return TransformKernel(w)


def offset_kernel(offsets, weights=None, size: int | None = None) -> TransformKernel:
    """Mixture of sub-cell shifts, one bilinear splat per real-valued offset.

    The kernel is grown past ``DEFAULT_KERNEL_SIZE`` when an offset does not fit.
    """
    offsets = np.atleast_2d(np.asarray(offsets, dtype=np.float64))
    if weights is None:
        weights = np.full(len(offsets), 1.0 / len(offsets))
    weights = np.asarray(weights, dtype=np.float64)
    if size is None:
        reach = int(math.ceil(np.abs(offsets).max())) if offsets.size else 0
        size = max(DEFAULT_KERNEL_SIZE, 2 * reach + 1)
    half = size // 2
    w = np.zeros((size, size))
    for (dx, dy), a in zip(offsets, weights):
        x0, y0 = math.floor(dx), math.floor(dy)
        fx, fy = dx - x0, dy - y0
        for ox, wx in ((x0, 1 - fx), (x0 + 1, fx)):
            for oy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
                if wx * wy == 0:
                    continue
                if abs(ox) > half or abs(oy) > half:
                    raise ValueError(f"offset ({dx}, {dy}) does not fit a {size}x{size} kernel")
                w[half + oy, half + ox] += a * wx * wy
    return TransformKernel(w)


def _convolve_array(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # out[y, x] = sum_{u,v} K[h+v, h+u] * M[y-v, x-u], zero outside the map
    h = kernel.shape[0] // 2
    height, width = values.shape
    padded = np.zeros((height + 2 * h, width + 2 * h))
    padded[h:h + height, h:h + width] = values
    out = np.zeros((height, width))
    for v in range(-h, h + 1):
        for u in range(-h, h + 1):
            k = kernel[h + v, h + u]
            if k != 0.0:
                out += k * padded[h - v:h - v + height, h - u:h - u + width]
    return out


def convolve(cmap: ConfidenceMap, kernel: TransformKernel) -> ConfidenceMap:
    """Zero-padded convolution; a shift kernel moves content by its offset."""
    if kernel.size > min(cmap.width, cmap.height):
        raise ValueError(f"kernel of size {kernel.size} exceeds map {cmap.width}x{cmap.height}")
    return ConfidenceMap(_convolve_array(cmap.values, kernel.weights), cmap.joint_id)


def fuse_shifted(target: ConfidenceMap, source: ConfidenceMap,
                 kernel: TransformKernel) -> ConfidenceMap:
    """Add ``source`` transported by ``kernel`` onto ``target``."""
    if target.values.shape != source.values.shape:
        raise ValueError(f"target {target.values.shape} and source {source.values.shape} differ")
    moved = convolve(source, kernel)
    return ConfidenceMap(target.values + moved.values, target.joint_id)


def find_peaks(cmap: ConfidenceMap, threshold: float, nms_radius: int = 1) -> list[Peak]:
    """Local maxima at or above ``threshold``, greedily thinned.

    Candidates are cells that equal the maximum of their 3x3 neighbourhood.
    They are visited by descending value, ties broken by row then column, and a
    candidate is kept only if no kept peak lies within Chebyshev distance
    ``nms_radius``.
    """
    if nms_radius < 1:
        raise ValueError(f"nms_radius must be >= 1, got {nms_radius}")
    v = cmap.values
    height, width = v.shape
    padded = np.full((height + 2, width + 2), -np.inf)
    padded[1:-1, 1:-1] = v
    neigh = np.max(np.stack([padded[1 + dy:1 + dy + height, 1 + dx:1 + dx + width]
                             for dy in (-1, 0, 1) for dx in (-1, 0, 1)]), axis=0)
    ys, xs = np.nonzero((v >= neigh) & (v >= threshold))
    order = sorted(range(len(ys)), key=lambda k: (-v[ys[k], xs[k]], ys[k], xs[k]))
    kept: list[Peak] = []
    for k in order:
        x, y = int(xs[k]), int(ys[k])
        if all(max(abs(x - p.position[0]), abs(y - p.position[1])) > nms_radius for p in kept):
            kept.append(Peak((x, y), float(v[y, x]), cmap.joint_id))
    return kept


def argmax_cell(cmap: ConfidenceMap) -> tuple[int, int]:
    """Row-major first maximum, as ``(x, y)``."""
    idx = int(np.argmax(cmap.values))
    y, x = divmod(idx, cmap.width)
    return x, y


# --- Confidence Map File -------------------------------------------------------

class CMFError(ValueError):
    pass


def encode_cmf(maps) -> bytes:
    stack = as_stack(maps)
    n, height, width = stack.shape
    header = f"{CMF_MAGIC} {width} {height} {n}\n".encode("ascii")
    return header + stack.astype("<f4").tobytes(order="C")


def decode_cmf(data: bytes) -> np.ndarray:
    """Parse CMF bytes into a ``(J, H, W)`` float64 stack."""
    nl = data.find(b"\n")
    if nl < 0:
        raise CMFError("CMF header: no newline found at byte offset 0")
    try:
        fields = data[:nl].decode("ascii").split()
    except UnicodeDecodeError:
        raise CMFError("CMF header at byte offset 0 is not ASCII") from None
    if len(fields) != 4 or fields[0] != CMF_MAGIC:
        raise CMFError(f"CMF header at byte offset 0 malformed: {data[:nl]!r}")
    try:
        width, height, n = (int(f) for f in fields[1:])
    except ValueError:
        raise CMFError(f"CMF header at byte offset 0 has non-integer dims: {data[:nl]!r}") from None
    if width < 1 or height < 1 or n < 1:
        raise CMFError(f"CMF header at byte offset 0 has non-positive dims: {width} {height} {n}")
    start = nl + 1
    expected = n * height * width * 4
    actual = len(data) - start
    if actual != expected:
        raise CMFError(f"CMF payload at byte offset {start}: expected {expected} bytes, got {actual}")
    stack = np.frombuffer(data, dtype="<f4", offset=start).reshape(n, height, width)
    stack = stack.astype(np.float64)
    if not np.all(np.isfinite(stack)):
        bad = int(np.flatnonzero(~np.isfinite(stack.ravel()))[0])
        raise CMFError(f"CMF value at byte offset {start + 4 * bad} is not finite")
    return stack


def save_cmf(path, maps) -> None:
    Path(path).write_bytes(encode_cmf(maps))


def load_cmf(path) -> list[ConfidenceMap]:
    stack = decode_cmf(Path(path).read_bytes())
    return [ConfidenceMap(plane, j) for j, plane in enumerate(stack)]

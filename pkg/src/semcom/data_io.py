"""Clip loading, synthetic clip generation, and bandwidth accounting.

A clip is a short group of frames treated as one transmission unit. Frames
are float arrays of shape (N, H, W, 3) with values in [0, 1]. Clips can be
read from a directory of image files or from a single raw tensor file
(".svc1"): magic bytes ``SVC1``, then little-endian uint32 N, H, W, then
N*H*W*3 float32 values in (frame, row, col, channel) order.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadDimensions,
    BadShift,
    MissingFile,
    ShapeMismatch,
    TooFewFrames,
    ZeroSymbols,
)

SVC1_MAGIC = b"SVC1"
IMAGE_EXTENSIONS = (".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg")


@dataclass(frozen=True)
class VideoClip:
    """A group of N frames of shape (H, W, 3), pixel values in [0, 1]."""

    frames: np.ndarray
    frame_rate: float = 24.0
    clip_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[-1] != 3:
            raise ShapeMismatch(f"expected frames of shape (N, H, W, 3), got {arr.shape}")
        if arr.shape[0] < 2:
            raise TooFewFrames(f"a clip needs at least 2 frames, got {arr.shape[0]}")
        if not np.isfinite(arr).all():
            raise ShapeMismatch("frames contain non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ShapeMismatch(
                f"pixel values must lie in [0, 1], got range "
                f"[{arr.min():.4f}, {arr.max():.4f}]"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def group_size(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def source_dimension(self) -> int:
        """Number of real source values: 3 * H * W * N."""
        n, h, w, _ = self.frames.shape
        return 3 * h * w * n


@dataclass(frozen=True)
class BandwidthBudget:
    """Channel symbol budget for one clip.

    k is the number of complex channel symbols, m the source dimension
    3*H*W*N, and rho the achieved ratio k/m.
    """

    k: int
    m: int
    rho: float = field(init=False)

    def __post_init__(self):
        if self.k < 1:
            raise ZeroSymbols(f"budget requires k >= 1, got {self.k}")
        object.__setattr__(self, "rho", self.k / self.m)


def budget_for(rho: float, height: int, width: int, group_size: int) -> BandwidthBudget:
    """Turn a target compression ratio into a whole-symbol budget.

    k = round(rho * 3 * H * W * N), half-up. Raises ZeroSymbols when the
    target ratio rounds to zero symbols.
    """
    if not (0.0 < rho <= 1.0):
        raise ZeroSymbols(f"rho must lie in (0, 1], got {rho}")
    m = 3 * height * width * group_size
    k = int(np.floor(rho * m + 0.5))
    if k == 0:
        raise ZeroSymbols(f"rho={rho} rounds to zero symbols for m={m}")
    return BandwidthBudget(k=k, m=m)


def validate_downsampling(clip: VideoClip, t: int) -> None:
    """Check that clip dimensions divide evenly by the downsampling factor."""
    if clip.height % t or clip.width % t:
        raise BadDimensions(
            f"frame size {clip.height}x{clip.width} not divisible by t={t}"
        )


def to_uint8(clip: VideoClip) -> np.ndarray:
    """Quantize pixels to the usual 8-bit representation."""
    return np.round(clip.frames * 255.0).astype(np.uint8)


def clip_from_uint8(arr: np.ndarray, frame_rate: float = 24.0, clip_id: str = "") -> VideoClip:
    return VideoClip(np.asarray(arr, dtype=np.float32) / 255.0, frame_rate, clip_id)


def _smooth_base_frame(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """A seeded band-limited pattern, circularly periodic in both axes."""
    yy = np.arange(height, dtype=np.float64)[:, None] / height
    xx = np.arange(width, dtype=np.float64)[None, :] / width
    img = np.zeros((height, width, 3), dtype=np.float64)
    for c in range(3):
        for _ in range(4):
            fy = int(rng.integers(1, 4))
            fx = int(rng.integers(1, 4))
            py, px = rng.uniform(0.0, 1.0, size=2)
            amp = float(rng.uniform(0.3, 1.0))
            img[..., c] += amp * np.sin(2 * np.pi * (fy * yy + py)) * np.sin(
                2 * np.pi * (fx * xx + px)
            )
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-9:
        return np.full_like(img, 0.5)
    return 0.05 + 0.9 * (img - lo) / (hi - lo)


def make_synthetic_clip(
    kind: str,
    height: int,
    width: int,
    group_size: int,
    shift: tuple[int, int] = (1, 0),
    seed: int = 0,
) -> VideoClip:
    """Generate a deterministic test clip.

    kind "constant" repeats one flat seeded color; "translate" rolls a smooth
    seeded pattern by (dx, dy) pixels per frame (circular); "noise" draws
    i.i.d. uniform pixels. Identical seeds give bit-identical clips.
    """
    rng = np.random.default_rng(seed)
    if kind == "constant":
        color = rng.uniform(0.1, 0.9, size=3)
        frames = np.broadcast_to(
            color.astype(np.float32), (group_size, height, width, 3)
        ).copy()
    elif kind == "translate":
        dx, dy = int(shift[0]), int(shift[1])
        if abs(dx) >= width or abs(dy) >= height:
            raise BadShift(f"shift {shift} exceeds frame size {height}x{width}")
        base = _smooth_base_frame(rng, height, width)
        frames = np.empty((group_size, height, width, 3), dtype=np.float64)
        frames[0] = base
        for i in range(1, group_size):
            frames[i] = np.roll(frames[i - 1], shift=(dy, dx), axis=(0, 1))
    elif kind == "noise":
        frames = rng.uniform(0.0, 1.0, size=(group_size, height, width, 3))
    else:
        raise ValueError(f"unknown synthetic clip kind: {kind!r}")
    return VideoClip(frames.astype(np.float32), clip_id=f"synthetic-{kind}-{seed}")


def write_clip(clip: VideoClip, path: str) -> None:
    """Serialize a clip in the raw SVC1 tensor format."""
    n, h, w, _ = clip.frames.shape
    with open(path, "wb") as fh:
        fh.write(SVC1_MAGIC)
        fh.write(struct.pack("<III", n, h, w))
        fh.write(np.ascontiguousarray(clip.frames, dtype="<f4").tobytes())


def _read_svc1(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SVC1_MAGIC:
            raise MissingFile(f"{path} is not an SVC1 file (magic={magic!r})")
        n, h, w = struct.unpack("<III", fh.read(12))
        payload = fh.read(n * h * w * 3 * 4)
    arr = np.frombuffer(payload, dtype="<f4")
    if arr.size != n * h * w * 3:
        raise MissingFile(f"{path} is truncated: expected {n * h * w * 3} values, got {arr.size}")
    return arr.reshape(n, h, w, 3).astype(np.float32)


def _read_image_dir(path: str) -> np.ndarray:
    from PIL import Image

    names = sorted(
        f for f in os.listdir(path) if f.lower().endswith(IMAGE_EXTENSIONS)
    )
    if not names:
        raise MissingFile(f"no image files found in {path}")
    frames = []
    for name in names:
        with Image.open(os.path.join(path, name)) as im:
            frames.append(np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0)
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise ShapeMismatch(f"frames in {path} have differing shapes: {sorted(shapes)}")
    return np.stack(frames)


def _resize_frames(frames: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Center-crop to the target aspect ratio, then bilinear-resize."""
    from PIL import Image

    th, tw = target_hw
    n, h, w, _ = frames.shape
    if (h, w) == (th, tw):
        return frames
    scale = min(h / th, w / tw)
    ch, cw = int(round(th * scale)), int(round(tw * scale))
    y0, x0 = (h - ch) // 2, (w - cw) // 2
    cropped = frames[:, y0 : y0 + ch, x0 : x0 + cw, :]
    out = np.empty((n, th, tw, 3), dtype=np.float32)
    for i in range(n):
        for c in range(3):
            im = Image.fromarray(cropped[i, :, :, c], mode="F")
            out[i, :, :, c] = np.asarray(
                im.resize((tw, th), resample=Image.BILINEAR), dtype=np.float32
            )
    return np.clip(out, 0.0, 1.0)


def load_clip(
    path: str,
    group_size: int,
    target_hw: tuple[int, int] | None = None,
    t: int = 1,
) -> VideoClip:
    """Load the first `group_size` frames of a stored clip.

    `path` may be a directory of image files or an SVC1 raw tensor file.
    When `target_hw` is given the frames are center-cropped and resized to
    that size. `t` is the downsampling factor the pipeline will use; frame
    dimensions must divide by it.
    """
    if not os.path.exists(path):
        raise MissingFile(f"clip path does not exist: {path}")
    if os.path.isdir(path):
        frames = _read_image_dir(path)
    else:
        frames = _read_svc1(path)
    if frames.shape[0] < group_size:
        raise TooFewFrames(
            f"{path} holds {frames.shape[0]} frames, need at least {group_size}"
        )
    frames = frames[:group_size]
    if target_hw is not None:
        frames = _resize_frames(frames, target_hw)
    clip = VideoClip(np.clip(frames, 0.0, 1.0), clip_id=os.path.basename(path))
    validate_downsampling(clip, t)
    return clip

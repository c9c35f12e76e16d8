"""Turn a 4D series into 2-channel sliding-window images; spatial downsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ChannelImage, DataError, ensure_finite


@dataclass(frozen=True)
class WindowConfig:
    """Sliding window over the time axis: length `w` frames, step `stride` frames."""

    w: int
    stride: int

    def __post_init__(self) -> None:
        if self.w < 2:
            raise DataError(f"window length must be >= 2 (std uses divisor w-1), got {self.w}")
        if self.stride < 1:
            raise DataError(f"stride must be >= 1, got {self.stride}")


def window_count(n_frames: int, cfg: WindowConfig) -> int:
    """Number of windows: floor((T - w) / stride) + 1."""
    if cfg.w > n_frames:
        raise DataError(f"window length {cfg.w} exceeds series length {n_frames}")
    return (n_frames - cfg.w) // cfg.stride + 1


def sliding_window_channels(series: np.ndarray, cfg: WindowConfig) -> list[ChannelImage]:
    """Per-voxel windowed mean and sample std (divisor w-1) as 2-channel images.

    `series` has axes (x, y, z, t); window k covers frames
    [k*stride, k*stride + w), i.e. the window ending at frame t spans
    t+1-w .. t.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 4:
        raise DataError(f"series must be 4D (x, y, z, t), got ndim={series.ndim}")
    n_frames = series.shape[3]
    count = window_count(n_frames, cfg)
    images = []
    for k in range(count):
        start = k * cfg.stride
        window = series[..., start : start + cfg.w]
        mean = window.mean(axis=3)
        std = window.std(axis=3, ddof=1)
        images.append(ChannelImage(np.stack([mean, std])))
    return images


def downsample(volume: np.ndarray, target: tuple[int, int, int]) -> np.ndarray:
    """Reduce a 3D volume to `target` extents.

    Uses exact block averaging when every source extent is an integer multiple
    of its target, trilinear interpolation at cell centers otherwise.
    """
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3:
        raise DataError(f"downsample expects a 3D volume, got ndim={volume.ndim}")
    target = tuple(int(t) for t in target)
    if len(target) != 3 or any(t < 1 for t in target):
        raise DataError(f"target extents must be three positive ints, got {target}")
    src = volume.shape
    if any(t > s for s, t in zip(src, target)):
        raise DataError(f"cannot upsample {src} to {target}")
    if src == target:
        return volume.copy()
    if all(s % t == 0 for s, t in zip(src, target)):
        fx, fy, fz = (s // t for s, t in zip(src, target))
        blocks = volume.reshape(target[0], fx, target[1], fy, target[2], fz)
        out = blocks.mean(axis=(1, 3, 5))
    else:
        out = _trilinear(volume, target)
    return ensure_finite(out, "downsampled volume")


def _trilinear(volume: np.ndarray, target: tuple[int, int, int]) -> np.ndarray:
    """Sample at target cell centers mapped into source cell-center coordinates."""
    out = volume
    for axis, (s, t) in enumerate(zip(volume.shape, target)):
        coords = (np.arange(t) + 0.5) * (s / t) - 0.5
        coords = np.clip(coords, 0.0, s - 1.0)
        lo = np.floor(coords).astype(np.int64)
        hi = np.minimum(lo + 1, s - 1)
        frac = coords - lo
        lo_vals = np.take(out, lo, axis=axis)
        hi_vals = np.take(out, hi, axis=axis)
        shape = [1, 1, 1]
        shape[axis] = t
        frac = frac.reshape(shape)
        out = lo_vals * (1.0 - frac) + hi_vals * frac
    return out

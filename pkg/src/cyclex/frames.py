"""Unsupervised difference frames: where a counterfactual differs from its query.

Pipeline: absolute difference (scaled to 0..255) -> Gaussian blur ->
threshold -> connected components -> top-K boxes by area. Boxes are half-open
pixel rectangles (x0, y0, x1, y1).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .kernels import blur_separable, label_components

DIFF_SCALE = 255.0


@dataclass(frozen=True)
class FrameConfig:
    blur_size: int = 5
    blur_sigma: float = 1.0
    threshold: float = 95.0
    k: int = 5
    connectivity: int = 8
    # optional per-finding threshold overrides (the operator's per-finding L)
    threshold_per_finding: dict[str, float] | None = None

    def __post_init__(self):
        if self.blur_size < 1 or self.blur_size % 2 == 0:
            raise ValueError(f"blur_size must be odd and >= 1, got {self.blur_size}")
        if not 0 <= self.threshold <= 255:
            raise ValueError(f"threshold must be in [0, 255], got {self.threshold}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")

    def for_finding(self, name: str) -> "FrameConfig":
        if self.threshold_per_finding and name in self.threshold_per_finding:
            return replace(self, threshold=self.threshold_per_finding[name])
        return self


@dataclass(frozen=True)
class Component:
    area: int
    box: tuple[int, int, int, int]


@dataclass(frozen=True)
class DiffFrame:
    boxes: tuple[tuple[int, int, int, int, int], ...]  # (x0, y0, x1, y1, area)


def abs_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| on [0,1] images, scaled to the 0..255 byte range."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64)) * DIFF_SCALE


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    return blur_separable(np.asarray(img, np.float64), gaussian_kernel(cfg.blur_size, cfg.blur_sigma))


def threshold_mask(img: np.ndarray, level: float) -> np.ndarray:
    return np.asarray(img) > level


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[Component]:
    """Maximal connected pixel groups, in raster order of their first pixel."""
    labels, n = label_components(np.ascontiguousarray(mask, dtype=np.uint8), connectivity)
    comps = []
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        comps.append(
            Component(
                area=int(ys.size),
                box=(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1),
            )
        )
    return comps


def top_k_frames(components: list[Component], k: int) -> DiffFrame:
    """K largest components by area; ties broken by (top y, then left x)."""
    ordered = sorted(components, key=lambda c: (-c.area, c.box[1], c.box[0]))
    return DiffFrame(
        boxes=tuple((c.box[0], c.box[1], c.box[2], c.box[3], c.area) for c in ordered[:k])
    )


def frame_pipeline(query: np.ndarray, counterfactual: np.ndarray, cfg: FrameConfig) -> DiffFrame:
    diff = abs_diff(query, counterfactual)
    blurred = gaussian_blur(diff, cfg)
    mask = threshold_mask(blurred, cfg.threshold)
    return top_k_frames(connected_components(mask, cfg.connectivity), cfg.k)


def threshold_sweep(
    query: np.ndarray,
    counterfactual: np.ndarray,
    cfg: FrameConfig,
    levels: list[float],
) -> list[dict]:
    """Mask area and component count per threshold level, for operator tuning."""
    blurred = gaussian_blur(abs_diff(query, counterfactual), cfg)
    rows = []
    for level in levels:
        mask = threshold_mask(blurred, level)
        comps = connected_components(mask, cfg.connectivity)
        rows.append(
            {
                "threshold": float(level),
                "mask_area": int(mask.sum()),
                "n_components": len(comps),
                "largest_area": max((c.area for c in comps), default=0),
            }
        )
    return rows

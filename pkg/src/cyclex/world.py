"""Synthetic chest-phantom distribution with controllable abnormalities.

Every render draws its full latent geometry (background texture, exposure,
and the parameters of every finding, active or not) from the seed before
compositing, so two renders with the same seed differ only inside the regions
of the findings that differ. Finding features live in pairwise-disjoint
canonical regions, which is what makes region statistics separable and
localization scoring meaningful.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import substream, substream_seed

DEFAULT_VOCABULARY = (
    "cardiomegaly",
    "support_device",
    "lung_opacity",
    "effusion",
    "atelectasis",
)

# unit-coordinate base anatomy (x right, y down)
_TORSO = (0.50, 0.55, 0.42, 0.42, 0.45)  # cx, cy, rx, ry, intensity
_LUNG_R = (0.31, 0.42, 0.155, 0.26, 0.22)
_LUNG_L = (0.69, 0.42, 0.155, 0.26, 0.22)
_HEART = (0.50, 0.625, 0.115, 0.095, 0.58)

# canonical per-finding boxes in unit coordinates (x0, y0, x1, y1),
# pairwise disjoint; every feature is drawn strictly inside its box
_CANONICAL = {
    "cardiomegaly": (0.30, 0.48, 0.70, 0.77),
    "support_device": (0.44, 0.02, 0.57, 0.46),
    "lung_opacity": (0.13, 0.17, 0.44, 0.47),
    "effusion": (0.70, 0.51, 0.85, 0.69),
    "atelectasis": (0.59, 0.21, 0.84, 0.37),
}


def default_geometry() -> dict[str, dict[str, tuple[float, float]]]:
    return {
        "cardiomegaly": {
            "rx": (0.150, 0.190),
            "ry": (0.112, 0.140),
            "value": (0.70, 0.92),
        },
        "support_device": {
            "x_top": (0.47, 0.53),
            "x_bot": (0.47, 0.53),
            "value": (0.68, 0.95),
        },
        "lung_opacity": {
            "cx": (0.26, 0.33),
            "cy": (0.27, 0.36),
            "radius": (0.055, 0.095),
            "amp": (0.32, 0.65),
        },
        "effusion": {
            "y_top": (0.53, 0.59),
            "amp": (0.28, 0.60),
        },
        "atelectasis": {
            "yc": (0.25, 0.32),
            "height": (0.035, 0.065),
            "amp": (0.26, 0.55),
        },
    }


@dataclass(frozen=True)
class WorldConfig:
    image_size: int = 64
    vocabulary: tuple[str, ...] = DEFAULT_VOCABULARY
    texture_amplitude: float = 0.03
    exposure_jitter: float = 0.02
    rng_seed: int = 0
    geometry: dict[str, dict[str, tuple[float, float]]] = field(
        default_factory=default_geometry
    )

    def __post_init__(self):
        if self.image_size < 16:
            raise ValueError(f"image_size must be >= 16, got {self.image_size}")
        if not self.vocabulary:
            raise ValueError("vocabulary must be non-empty")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError("vocabulary names must be unique")
        unknown = set(self.vocabulary) - set(_CANONICAL)
        if unknown:
            raise ValueError(f"no renderer for findings: {sorted(unknown)}")
        for name in self.vocabulary:
            for key, (lo, hi) in self.geometry[name].items():
                if lo > hi:
                    raise ValueError(f"degenerate range {name}.{key}: ({lo}, {hi})")


@dataclass(frozen=True)
class PhantomSample:
    image: np.ndarray
    gt_findings: np.ndarray  # bool, len(vocabulary)
    gt_regions: dict[str, tuple[int, int, int, int]]  # half-open pixel boxes


def canonical_region(config: WorldConfig, name: str) -> tuple[int, int, int, int]:
    """Pixel box (half-open) of the canonical region for a finding."""
    s = config.image_size
    x0, y0, x1, y1 = _CANONICAL[name]
    return (int(round(x0 * s)), int(round(y0 * s)), int(round(x1 * s)), int(round(y1 * s)))


def _ellipse_mask(s: int, cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    yy, xx = np.mgrid[0:s, 0:s]
    u = (xx + 0.5) / s
    v = (yy + 0.5) / s
    return ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2 <= 1.0


def _value_noise(rng: np.random.Generator, s: int) -> np.ndarray:
    """Two octaves of bilinearly upsampled uniform noise in [-1, 1]."""
    out = np.zeros((s, s))
    for cells, weight in ((8, 0.6), (16, 0.4)):
        grid = rng.uniform(-1.0, 1.0, (cells + 1, cells + 1))
        pos = np.linspace(0.0, cells, s)
        i = np.minimum(pos.astype(int), cells - 1)
        f = pos - i
        rows = grid[i][:, i] * np.outer(1 - f, 1 - f)
        rows += grid[i + 1][:, i] * np.outer(f, 1 - f)
        rows += grid[i][:, i + 1] * np.outer(1 - f, f)
        rows += grid[i + 1][:, i + 1] * np.outer(f, f)
        out += weight * rows
    return out


def _draw_params(config: WorldConfig, rng: np.random.Generator):
    """All latent scene parameters, drawn in a fixed order regardless of findings."""
    scene = {
        "exposure": rng.uniform(-config.exposure_jitter, config.exposure_jitter),
        "texture": _value_noise(rng, config.image_size) * config.texture_amplitude,
    }
    for name in config.vocabulary:
        scene[name] = {
            key: rng.uniform(lo, hi) for key, (lo, hi) in config.geometry[name].items()
        }
    return scene


def _clip_box(mask: np.ndarray, box: tuple[int, int, int, int]) -> np.ndarray:
    out = np.zeros_like(mask)
    x0, y0, x1, y1 = box
    out[y0:y1, x0:x1] = mask[y0:y1, x0:x1]
    return out


def _bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def _render_finding(
    name: str, params: dict[str, float], config: WorldConfig, img: np.ndarray
) -> tuple[int, int, int, int]:
    """Composite one finding into img (in place); returns its tight pixel box."""
    s = config.image_size
    box = canonical_region(config, name)
    yy, xx = np.mgrid[0:s, 0:s]
    u = (xx + 0.5) / s
    v = (yy + 0.5) / s

    if name == "cardiomegaly":
        hx, hy = _HEART[0], _HEART[1]
        mask = _clip_box(_ellipse_mask(s, hx, hy, params["rx"], params["ry"]), box)
        field = np.full_like(img, params["value"])
        mode, anchor = "max", (hx, hy)
    elif name == "support_device":
        x0, y0, x1, y1 = box
        ys = np.arange(y0, y1)
        frac = (ys - y0) / max(y1 - 1 - y0, 1)
        xpix = np.rint((params["x_top"] + (params["x_bot"] - params["x_top"]) * frac) * s).astype(int)
        xpix = np.clip(xpix, x0, max(x1 - 2, x0))
        mask = np.zeros_like(img, dtype=bool)
        mask[ys, xpix] = True
        mask[ys, np.minimum(xpix + 1, s - 1)] = True  # 2 px wide tube
        field = np.full_like(img, params["value"])
        mode, anchor = "max", (params["x_top"], (box[1] + box[3]) / (2 * s))
    elif name == "lung_opacity":
        r = params["radius"]
        d = np.sqrt((u - params["cx"]) ** 2 + (v - params["cy"]) ** 2)
        # filled disc with a soft rim over the outer quarter of the radius
        field = params["amp"] * np.clip((r - d) / (0.25 * r), 0.0, 1.0)
        mask = _clip_box(d <= r, box)
        mode, anchor = "add", (params["cx"], params["cy"])
    elif name == "effusion":
        lx, ly, lrx, lry, _ = _LUNG_L
        lung = ((u - lx) / lrx) ** 2 + ((v - ly) / lry) ** 2 <= 1.0
        mask = _clip_box(lung & (v >= params["y_top"]), box)
        depth = np.clip((v - params["y_top"]) / max(ly + lry - params["y_top"], 1e-6), 0.0, 1.0)
        field = params["amp"] * (0.35 + 0.65 * depth)
        mode, anchor = "add", (lx, min(params["y_top"] + 0.03, (box[3] - 1) / s))
    elif name == "atelectasis":
        lx, ly, lrx, lry, _ = _LUNG_L
        lung = ((u - lx) / lrx) ** 2 + ((v - ly) / lry) ** 2 <= 1.0
        mask = _clip_box(lung & (np.abs(v - params["yc"]) <= params["height"] / 2.0), box)
        field = np.full_like(img, params["amp"])
        mode, anchor = "add", (lx, params["yc"])
    else:
        raise ValueError(f"unknown finding {name}")

    if not mask.any():
        # degenerate sizes: guarantee one pixel at the feature anchor
        px = int(np.clip(anchor[0] * s, box[0], box[2] - 1))
        py = int(np.clip(anchor[1] * s, box[1], box[3] - 1))
        mask[py, px] = True
        if mode == "add" and field[py, px] <= 0:
            field[py, px] = params.get("amp", 0.3)
    if mode == "max":
        img[mask] = np.maximum(img[mask], field[mask])
    else:
        img[mask] += field[mask]
    return _bbox(mask)


def render(config: WorldConfig, findings: np.ndarray, seed: int) -> PhantomSample:
    """Deterministic phantom render for a finding vector and a seed."""
    findings = np.asarray(findings, dtype=bool)
    if findings.shape != (len(config.vocabulary),):
        raise ValueError(
            f"findings length {findings.shape} != vocabulary size {len(config.vocabulary)}"
        )
    rng = np.random.default_rng(seed)
    scene = _draw_params(config, rng)
    s = config.image_size

    img = np.full((s, s), 0.08)
    for cx, cy, rx, ry, val in (_TORSO, _LUNG_R, _LUNG_L, _HEART):
        img[_ellipse_mask(s, cx, cy, rx, ry)] = val
    img += scene["texture"] + scene["exposure"]

    regions: dict[str, tuple[int, int, int, int]] = {}
    for i, name in enumerate(config.vocabulary):
        if findings[i]:
            regions[name] = _render_finding(name, scene[name], config, img)
    return PhantomSample(
        image=np.clip(img, 0.0, 1.0), gt_findings=findings.copy(), gt_regions=regions
    )


def sample_dataset(
    config: WorldConfig, n: int, prevalence: float | np.ndarray
) -> list[PhantomSample]:
    """n independent renders with findings drawn per the prevalence(s)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    nf = len(config.vocabulary)
    prev = np.broadcast_to(np.asarray(prevalence, dtype=np.float64), (nf,))
    if np.any((prev < 0) | (prev > 1)):
        raise ValueError(f"prevalence must be in [0,1], got {prev}")
    frng = substream(config.rng_seed, "findings")
    flags = frng.random((n, nf)) < prev
    return [
        render(config, flags[i], substream_seed(config.rng_seed, "render", i))
        for i in range(n)
    ]


def write_dataset(
    samples: list[PhantomSample], outdir: str | os.PathLike, config: WorldConfig
) -> None:
    """Emit PGM images plus a JSON-lines manifest."""
    from .pgm import write_pgm

    out = Path(outdir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.jsonl", "w") as fh:
        for i, s in enumerate(samples):
            sid = f"s{i:05d}"
            rel = f"images/{sid}.pgm"
            write_pgm(out / rel, s.image)
            rec = {
                "id": sid,
                "image_path": rel,
                "gt_findings": [
                    n for n, a in zip(config.vocabulary, s.gt_findings) if a
                ],
                "gt_regions": {k: list(v) for k, v in s.gt_regions.items()},
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_dataset(
    indir: str | os.PathLike, vocabulary: tuple[str, ...]
) -> list[PhantomSample]:
    from .pgm import read_pgm

    out = Path(indir)
    samples = []
    with open(out / "manifest.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            img = read_pgm(out / rec["image_path"])
            flags = np.array([n in rec["gt_findings"] for n in vocabulary])
            regions = {k: tuple(v) for k, v in rec["gt_regions"].items()}
            samples.append(PhantomSample(image=img, gt_findings=flags, gt_regions=regions))
    return samples

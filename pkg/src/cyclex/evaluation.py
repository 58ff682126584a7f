"""Metrics and experiment harness: cyclic success counting, ablation rows,
localization scoring against synthetic ground truth, and panel images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import FrameConfig, abs_diff, gaussian_blur, threshold_mask
from .pipeline import CounterfactualRecord


@dataclass(frozen=True)
class FindingStats:
    n_manipulations: int
    n_success: int

    @property
    def rate(self) -> float:
        return self.n_success / self.n_manipulations if self.n_manipulations else 0.0


@dataclass(frozen=True)
class SuccessReport:
    n_images: int
    n_manipulations: int
    n_success: int
    n_preserved: int
    per_finding: dict[str, FindingStats]
    mean_psnr_reconstruction: float

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_manipulations if self.n_manipulations else 0.0

    @property
    def preservation_rate(self) -> float:
        return self.n_preserved / self.n_manipulations if self.n_manipulations else 0.0

    def to_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "n_manipulations": self.n_manipulations,
            "n_success": self.n_success,
            "n_preserved": self.n_preserved,
            "success_rate": self.success_rate,
            "preservation_rate": self.preservation_rate,
            "mean_psnr_reconstruction": self.mean_psnr_reconstruction,
            "per_finding": {
                name: {
                    "n_manipulations": st.n_manipulations,
                    "n_success": st.n_success,
                    "success_rate": st.rate,
                }
                for name, st in sorted(self.per_finding.items())
            },
        }


def success_rate(records: list[CounterfactualRecord]) -> SuccessReport:
    """Pure integer counting over the records' success/preservation flags."""
    if not records:
        raise ValueError("no records")
    n_man = n_suc = n_pres = 0
    per: dict[str, list[int]] = {}
    for rec in records:
        for cf in rec.counterfactuals:
            n_man += 1
            n_suc += int(cf.success)
            n_pres += int(cf.preserved)
            per.setdefault(cf.removed, [0, 0])
            per[cf.removed][0] += 1
            per[cf.removed][1] += int(cf.success)
    return SuccessReport(
        n_images=len(records),
        n_manipulations=n_man,
        n_success=n_suc,
        n_preserved=n_pres,
        per_finding={k: FindingStats(v[0], v[1]) for k, v in per.items()},
        mean_psnr_reconstruction=float(
            np.mean([r.psnr_reconstruction for r in records])
        ),
    )


@dataclass(frozen=True)
class AblationReport:
    generator_id: str
    rows: dict[str, SuccessReport]  # variant name -> report

    def to_dict(self) -> dict:
        return {
            "generator_id": self.generator_id,
            "rows": {k: v.to_dict() for k, v in sorted(self.rows.items())},
        }


def run_ablation(records_by_variant: dict[str, list[CounterfactualRecord]]) -> AblationReport:
    """One SuccessReport per variant; refuses mismatched query/manipulation sets."""
    if not records_by_variant:
        raise ValueError("no variants")
    keys = {
        name: [(r.query_id, tuple(c.removed for c in r.counterfactuals)) for r in recs]
        for name, recs in records_by_variant.items()
    }
    ref_name = next(iter(keys))
    for name, k in keys.items():
        if k != keys[ref_name]:
            raise ValueError(
                f"variant {name!r} has a different query/manipulation list than {ref_name!r}"
            )
    gen_ids = {r.generator_id for recs in records_by_variant.values() for r in recs}
    if len(gen_ids) != 1:
        raise ValueError(f"mixed generators in ablation: {sorted(gen_ids)}")
    return AblationReport(
        generator_id=gen_ids.pop(),
        rows={name: success_rate(recs) for name, recs in records_by_variant.items()},
    )


def box_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union else 0.0


def localization_score(
    record: CounterfactualRecord,
    gt_regions: dict[str, tuple[int, int, int, int]],
    frame_cfg: FrameConfig | None = None,
) -> dict[str, dict[str, float]]:
    """Per removed finding: IoU of the top-1 frame box with the ground-truth
    region, and the fraction of above-threshold difference mass inside it."""
    frame_cfg = frame_cfg or FrameConfig()
    out: dict[str, dict[str, float]] = {}
    for cf in record.counterfactuals:
        if cf.removed not in gt_regions:
            continue
        region = gt_regions[cf.removed]
        cfg_f = frame_cfg.for_finding(cf.removed)
        blurred = gaussian_blur(abs_diff(record.query, cf.image), cfg_f)
        mask = threshold_mask(blurred, cfg_f.threshold)
        mass = blurred * mask
        total = float(mass.sum())
        x0, y0, x1, y1 = region
        inside = float(mass[y0:y1, x0:x1].sum())
        iou = box_iou(cf.frame.boxes[0][:4], region) if cf.frame.boxes else 0.0
        out[cf.removed] = {
            "iou": iou,
            "mass_fraction": inside / total if total > 0 else 0.0,
        }
    return out


_SEPARATOR_WIDTH = 2
_MARKER = 3  # success marker square size in pixels


def emit_panel(record: CounterfactualRecord) -> np.ndarray:
    """Horizontal strip: query | reconstruction | one column per counterfactual.

    Frame boxes are 1-px outlines at max intensity; successful removals get a
    filled marker square in the top-left corner, failures a hollow one.
    """
    cols = [record.query.copy(), record.reconstruction.copy()]
    for cf in record.counterfactuals:
        img = cf.image.copy()
        for x0, y0, x1, y1, _area in cf.frame.boxes:
            img[y0, x0:x1] = 1.0
            img[y1 - 1, x0:x1] = 1.0
            img[y0:y1, x0] = 1.0
            img[y0:y1, x1 - 1] = 1.0
        if cf.success:
            img[1 : 1 + _MARKER, 1 : 1 + _MARKER] = 1.0
        else:
            img[1 : 1 + _MARKER, 1 : 1 + _MARKER] = 1.0
            img[2 : _MARKER, 2 : _MARKER] = 0.0
        cols.append(img)
    h = cols[0].shape[0]
    sep = np.zeros((h, _SEPARATOR_WIDTH))
    strip = [cols[0]]
    for c in cols[1:]:
        strip.extend([sep, c])
    return np.concatenate(strip, axis=1)

"""Lifecycle orchestration: pair images with the generator's own findings,
train the conditional diffusion model, select a checkpoint by validation
reconstruction PSNR, and produce cyclically verified counterfactuals.

The tailored training path never reads ground-truth labels; they ride along
in the dataset records only for the ablation variant and for evaluation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import blackbox
from .blackbox import GeneratorSpec, Report, generate_report, extract_findings, reorganize_prompt
from .diffusion import (
    AdamState,
    Denoiser,
    NetConfig,
    NoiseSchedule,
    NoisyState,
    cond_input,
    ddim_invert,
    make_schedule,
    psnr,
    sample,
    train_step,
)
from .frames import DiffFrame, FrameConfig, frame_pipeline
from .rng import substream
from .world import PhantomSample


class ManipulationError(ValueError):
    """Asked to remove a finding that is not in the generated report."""


class DatasetError(RuntimeError):
    """A sample could not be paired with a parseable generated report."""


@dataclass(frozen=True)
class DatasetRecord:
    sample_id: str
    image: np.ndarray
    gt_findings: np.ndarray
    gt_regions: dict[str, tuple[int, int, int, int]]
    report_text: str
    inferred: np.ndarray
    prompt: str
    split: str


@dataclass(frozen=True)
class TailoredDataset:
    generator_id: str
    vocabulary: tuple[str, ...]
    records: tuple[DatasetRecord, ...]

    def split(self, name: str) -> list[DatasetRecord]:
        return [r for r in self.records if r.split == name]


def prepare_dataset(
    generator: GeneratorSpec,
    samples: list[PhantomSample],
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> TailoredDataset:
    """Run the frozen generator over its training images and pair each image
    with the inferred findings and the reorganized prompt."""
    if not samples:
        raise ValueError("no samples")
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {split_fractions}")
    n = len(samples)
    n_train = int(round(split_fractions[0] * n))
    n_val = int(round(split_fractions[1] * n))
    records = []
    for i, s in enumerate(samples):
        sid = f"s{i:05d}"
        try:
            report = generate_report(generator, s.image)
            inferred = extract_findings(report, generator.vocabulary)
        except (ValueError, blackbox.ReportParseError) as exc:
            raise DatasetError(f"sample {sid}: {exc}") from exc
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        records.append(
            DatasetRecord(
                sample_id=sid,
                image=s.image,
                gt_findings=s.gt_findings,
                gt_regions=s.gt_regions,
                report_text=report.text,
                inferred=inferred,
                prompt=reorganize_prompt(inferred, generator.vocabulary),
                split=split,
            )
        )
    return TailoredDataset(
        generator_id=generator.generator_id,
        vocabulary=generator.vocabulary,
        records=tuple(records),
    )


@dataclass(frozen=True)
class TrainRunConfig:
    source: str = "tailored"  # or "ground_truth"
    steps: int = 4000
    checkpoint_every: int = 1000
    batch_size: int = 8
    lr: float = 2e-3
    lr_final_fraction: float = 0.1  # cosine decay floor; 1.0 = constant lr
    seed: int = 0
    t_train: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.05
    base_channels: int = 12
    mid_channels: int = 24
    dtype: str = "float32"
    ddim_steps: int = 25
    val_max: int = 24
    conditioning: str = "findings"  # or "words": raw sentence-bag conditioning

    def __post_init__(self):
        if self.source not in ("tailored", "ground_truth"):
            raise ValueError(f"source must be tailored or ground_truth, got {self.source}")
        if self.conditioning not in ("findings", "words"):
            raise ValueError(f"conditioning must be findings or words, got {self.conditioning}")
        if self.conditioning == "words" and self.source != "tailored":
            raise ValueError("word conditioning is the raw-report analog; it needs tailored source")
        if not self.steps >= self.checkpoint_every >= 1:
            raise ValueError(
                f"need steps >= checkpoint_every >= 1, got {self.steps}, {self.checkpoint_every}"
            )
        if not 1 <= self.ddim_steps <= self.t_train:
            raise ValueError(f"ddim_steps must be in [1, t_train], got {self.ddim_steps}")


def word_vocabulary(generator: GeneratorSpec) -> tuple[str, ...]:
    """Sorted token vocabulary of every sentence the generator can emit."""
    words = set()
    for sentence in list(generator.templates.values()) + [blackbox.NORMAL_SENTENCE]:
        words.update(_tokenize(sentence))
    return tuple(sorted(words))


def _tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z]+", text.lower())


@dataclass(frozen=True)
class Explainer:
    """A trained editing model plus everything needed to condition it."""

    model: Denoiser
    schedule: NoiseSchedule
    vocabulary: tuple[str, ...]
    ddim_steps: int = 25
    conditioning: str = "findings"
    word_vocab: tuple[str, ...] | None = None

    def cond_from_findings(self, findings: np.ndarray) -> np.ndarray:
        return cond_input(findings, len(self.vocabulary) + 1)[0]

    def cond_from_text(self, text: str) -> np.ndarray:
        return _word_bag(text, self.word_vocab)

    def cond(self, findings: np.ndarray, report_text: str | None = None) -> np.ndarray:
        if self.conditioning == "findings":
            return self.cond_from_findings(findings)
        if report_text is None:
            report_text = _text_for_findings(findings, self.vocabulary)
        return self.cond_from_text(report_text)


def _text_for_findings(findings: np.ndarray, vocabulary: tuple[str, ...]) -> str:
    # synthetic report text for a finding vector under word conditioning;
    # used when no raw report is available (e.g. edited conditions)
    names = [n for n, a in zip(vocabulary, findings) if a]
    if not names:
        return blackbox.NORMAL_SENTENCE
    return " ".join(n.replace("_", " ") for n in names)


@dataclass(frozen=True)
class Checkpoint:
    step: int
    psnr_val: float
    explainer: Explainer


def _word_bag(text: str, words: tuple[str, ...]) -> np.ndarray:
    bag = np.zeros(len(words), dtype=np.float64)
    for tok in _tokenize(text):
        if tok in words:
            bag[words.index(tok)] = 1.0
    return bag


def _conditioning_matrix(
    records: list[DatasetRecord], cfg: TrainRunConfig, words: tuple[str, ...] | None
) -> np.ndarray:
    if cfg.conditioning == "findings":
        labels = np.stack(
            [r.inferred if cfg.source == "tailored" else r.gt_findings for r in records]
        )
        return cond_input(labels, len(records[0].inferred) + 1)
    return np.stack([_word_bag(r.report_text, words) for r in records])


def train_run(
    dataset: TailoredDataset,
    cfg: TrainRunConfig,
    generator: GeneratorSpec | None = None,
    log_fn=None,
) -> list[Checkpoint]:
    """Train on the configured label source; snapshot a checkpoint (with mean
    validation reconstruction PSNR at the configured DDIM stride) every
    checkpoint_every steps."""
    train_recs = dataset.split("train")
    val_recs = dataset.split("val")
    if not train_recs or not val_recs:
        raise ValueError("dataset needs non-empty train and val splits")
    if cfg.conditioning == "words" and generator is None:
        raise ValueError("word conditioning needs the generator for its vocabulary")

    words = word_vocabulary(generator) if cfg.conditioning == "words" else None
    schedule = make_schedule(cfg.t_train, cfg.beta_start, cfg.beta_end)
    image_size = train_recs[0].image.shape[0]
    cond_rows = len(words) if words else len(dataset.vocabulary) + 1
    net_cfg = NetConfig(
        image_size=image_size,
        base_channels=cfg.base_channels,
        mid_channels=cfg.mid_channels,
        t_rows=cfg.t_train + 1,
        cond_rows=cond_rows,
        dtype=cfg.dtype,
    )
    model = Denoiser.create(net_cfg, substream(cfg.seed, "init"))
    opt = AdamState.for_params(model.params)
    batch_rng = substream(cfg.seed, "batches")
    noise_rng = substream(cfg.seed, "noise")

    images = np.stack([r.image for r in train_recs])[:, None, :, :]
    conds = _conditioning_matrix(train_recs, cfg, words)

    val_n = min(cfg.val_max, len(val_recs))
    val_images = np.stack([r.image for r in val_recs[:val_n]])
    val_conds = _conditioning_matrix(val_recs[:val_n], cfg, words)

    checkpoints: list[Checkpoint] = []
    for step in range(1, cfg.steps + 1):
        frac = (step - 1) / max(cfg.steps - 1, 1)
        lr = cfg.lr * (
            cfg.lr_final_fraction
            + (1.0 - cfg.lr_final_fraction) * 0.5 * (1.0 + np.cos(np.pi * frac))
        )
        idx = batch_rng.integers(0, len(train_recs), size=cfg.batch_size)
        loss = train_step(model, schedule, images[idx], conds[idx], noise_rng, opt, lr)
        if log_fn is not None:
            log_fn(step, loss)
        if step % cfg.checkpoint_every == 0:
            snap = Denoiser(net_cfg, {k: v.copy() for k, v in model.params.items()})
            explainer = Explainer(
                model=snap,
                schedule=schedule,
                vocabulary=dataset.vocabulary,
                ddim_steps=cfg.ddim_steps,
                conditioning=cfg.conditioning,
                word_vocab=words,
            )
            val_psnr = _mean_reconstruction_psnr(explainer, val_images, val_conds)
            checkpoints.append(Checkpoint(step=step, psnr_val=val_psnr, explainer=explainer))
    return checkpoints


def _mean_reconstruction_psnr(
    explainer: Explainer, images: np.ndarray, conds: np.ndarray
) -> float:
    latent = ddim_invert(explainer.model, explainer.schedule, images, conds, explainer.ddim_steps)
    recon = sample(explainer.model, explainer.schedule, latent, conds, explainer.ddim_steps)
    return float(np.mean([psnr(images[i], recon[i]) for i in range(images.shape[0])]))


def select_checkpoint(checkpoints: list[Checkpoint]) -> Checkpoint:
    """Highest validation PSNR; ties go to the earliest (fewest steps)."""
    if not checkpoints:
        raise ValueError("no checkpoints")
    best = checkpoints[0]
    for ck in checkpoints[1:]:
        if ck.psnr_val > best.psnr_val:
            best = ck
    return best


@dataclass(frozen=True)
class Counterfactual:
    removed: str
    image: np.ndarray
    edited_prompt: str
    regenerated_report: str
    regenerated_findings: np.ndarray
    success: bool
    preserved: bool
    psnr_vs_query: float
    frame: DiffFrame


@dataclass(frozen=True)
class CounterfactualRecord:
    query_id: str
    generator_id: str
    query: np.ndarray
    report_text: str
    inferred: np.ndarray
    reconstruction: np.ndarray
    psnr_reconstruction: float
    counterfactuals: tuple[Counterfactual, ...]
    gt_findings: np.ndarray | None = None
    gt_regions: dict[str, tuple[int, int, int, int]] | None = None


def make_counterfactual(
    explainer: Explainer,
    generator: GeneratorSpec,
    query: np.ndarray,
    remove: str,
) -> tuple[np.ndarray, str]:
    """Invert under the original inferred conditioning, re-sample with the
    finding removed. Returns (counterfactual image, edited prompt)."""
    report = generate_report(generator, query)
    inferred = extract_findings(report, generator.vocabulary)
    idx = generator.vocabulary.index(remove)
    if not inferred[idx]:
        raise ManipulationError(f"{remove} is not in the generated report")
    edited = inferred.copy()
    edited[idx] = False
    edited_prompt = reorganize_prompt(edited, generator.vocabulary)
    latent = ddim_invert(
        explainer.model,
        explainer.schedule,
        query,
        explainer.cond(inferred, report.text),
        explainer.ddim_steps,
    )
    cf = sample(
        explainer.model,
        explainer.schedule,
        latent,
        _edited_cond(explainer, generator, inferred, remove),
        explainer.ddim_steps,
    )
    return cf, edited_prompt


def _edited_cond(
    explainer: Explainer, generator: GeneratorSpec, inferred: np.ndarray, remove: str
) -> np.ndarray:
    idx = generator.vocabulary.index(remove)
    edited = inferred.copy()
    edited[idx] = False
    if explainer.conditioning == "findings":
        return explainer.cond_from_findings(edited)
    # word conditioning edits the raw report by deleting the finding's sentence
    kept = [
        generator.templates[n] for n, a in zip(generator.vocabulary, edited) if a
    ]
    text = " ".join(kept) if kept else blackbox.NORMAL_SENTENCE
    return explainer.cond_from_text(text)


def removal_flags(
    inferred: np.ndarray, removed_idx: int, regenerated: np.ndarray
) -> tuple[bool, bool]:
    """(success, preserved) for one manipulation.

    Success: the removed finding is absent from the regenerated findings.
    Preserved: every OTHER originally inferred finding is still present
    (vacuously true when there are none).
    """
    others = inferred.copy()
    others[removed_idx] = False
    return not bool(regenerated[removed_idx]), bool(np.all(regenerated[others]))


def explain_query(
    explainer: Explainer,
    generator: GeneratorSpec,
    query: np.ndarray,
    query_id: str,
    frame_cfg: FrameConfig | None = None,
    gt_findings: np.ndarray | None = None,
    gt_regions: dict | None = None,
    findings_filter: set[str] | None = None,
) -> CounterfactualRecord:
    """Reconstruction plus one verified counterfactual per reported finding
    (optionally restricted to findings_filter).

    One inversion is shared: the reconstruction and every edit re-sample the
    same latent under different conditioning (batched)."""
    frame_cfg = frame_cfg or FrameConfig()
    report = generate_report(generator, query)
    inferred = extract_findings(report, generator.vocabulary)
    active = [
        n
        for n, a in zip(generator.vocabulary, inferred)
        if a and (findings_filter is None or n in findings_filter)
    ]

    orig_cond = explainer.cond(inferred, report.text)
    latent = ddim_invert(
        explainer.model, explainer.schedule, query, orig_cond, explainer.ddim_steps
    )
    conds = [orig_cond] + [_edited_cond(explainer, generator, inferred, n) for n in active]
    stacked = np.repeat(latent.x[None], len(conds), axis=0)
    outputs = sample(
        explainer.model,
        explainer.schedule,
        NoisyState(x=stacked, t=latent.t),
        np.stack(conds),
        explainer.ddim_steps,
    )
    reconstruction = outputs[0]

    counterfactuals = []
    for j, name in enumerate(active):
        cf_img = outputs[j + 1]
        regen_report = generate_report(generator, cf_img)
        regen = extract_findings(regen_report, generator.vocabulary)
        idx = generator.vocabulary.index(name)
        success, preserved = removal_flags(inferred, idx, regen)
        edited = inferred.copy()
        edited[idx] = False
        counterfactuals.append(
            Counterfactual(
                removed=name,
                image=cf_img,
                edited_prompt=reorganize_prompt(edited, generator.vocabulary),
                regenerated_report=regen_report.text,
                regenerated_findings=regen,
                success=success,
                preserved=preserved,
                psnr_vs_query=psnr(query, cf_img),
                frame=frame_pipeline(query, cf_img, frame_cfg.for_finding(name)),
            )
        )
    return CounterfactualRecord(
        query_id=query_id,
        generator_id=generator.generator_id,
        query=query,
        report_text=report.text,
        inferred=inferred,
        reconstruction=reconstruction,
        psnr_reconstruction=psnr(query, reconstruction),
        counterfactuals=tuple(counterfactuals),
        gt_findings=gt_findings,
        gt_regions=gt_regions,
    )

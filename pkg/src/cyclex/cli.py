"""Command-line entry point.

Subcommands: synth, train, explain, evaluate, ablate, sweep-threshold,
report. Every command takes an optional JSON --config; explicit flags win
over file values. Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .blackbox import generate_report, load_generator
from .diffusion import load_checkpoint, save_checkpoint
from .evaluation import emit_panel, run_ablation, success_rate
from .frames import FrameConfig, threshold_sweep
from .pgm import read_pgm, write_pgm
from .pipeline import (
    Explainer,
    TrainRunConfig,
    explain_query,
    prepare_dataset,
    select_checkpoint,
    train_run,
)
from .world import WorldConfig, read_dataset, sample_dataset, write_dataset

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
LOCK_NAME = ".cyclex.lock"


class ConfigError(ValueError):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return cfg


def _merged(defaults: dict, cfg: dict, overrides: dict) -> dict:
    merged = dict(defaults)
    unknown = set(cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged.update(cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


class _RunDir:
    """Exclusive run directory: lock file plus a manifest."""

    def __init__(self, out: str | os.PathLike, command: str, config: dict, seed):
        self.path = Path(out)
        self.path.mkdir(parents=True, exist_ok=True)
        self.lock = self.path / LOCK_NAME
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"{self.path} is locked by another run (remove {self.lock} if stale)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        self.manifest = {
            "command": command,
            "config": config,
            "seed": seed,
            "version": f"cyclex-{__version__}",
            "out_dir": str(self.path),
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }

    def finish(self) -> None:
        self.manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        _write_json(self.path / "manifest.json", self.manifest)

    def release(self) -> None:
        self.lock.unlink(missing_ok=True)


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _frame_config(cfg: dict, args) -> FrameConfig:
    fc = dict(cfg.get("frames") or {})
    if getattr(args, "blur", None) is not None:
        fc["blur_size"] = args.blur
    if getattr(args, "threshold", None) is not None:
        fc["threshold"] = args.threshold
    if getattr(args, "k", None) is not None:
        fc["k"] = args.k
    try:
        return FrameConfig(**fc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad frame config: {exc}") from exc


def _world_config(merged: dict) -> WorldConfig:
    try:
        kwargs = {
            k: merged[k]
            for k in ("image_size", "texture_amplitude", "exposure_jitter", "rng_seed")
        }
        if merged.get("vocabulary"):
            kwargs["vocabulary"] = tuple(merged["vocabulary"])
        return WorldConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _explainer_from_checkpoint(path: str) -> Explainer:
    model, schedule, vocabulary, meta = load_checkpoint(path)
    return Explainer(
        model=model,
        schedule=schedule,
        vocabulary=vocabulary,
        ddim_steps=int(meta.get("ddim_steps", 25)),
        conditioning=meta.get("conditioning", "findings"),
        word_vocab=tuple(meta["word_vocab"]) if meta.get("word_vocab") else None,
    )


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    defaults = {
        "n": 100,
        "prevalence": 0.3,
        "image_size": 64,
        "texture_amplitude": 0.03,
        "exposure_jitter": 0.02,
        "rng_seed": 0,
        "vocabulary": None,
    }
    merged = _merged(defaults, _load_config(args.config), {"rng_seed": args.seed})
    wcfg = _world_config(merged)
    if merged["n"] < 1:
        raise ConfigError(f"n must be >= 1, got {merged['n']}")
    run = _RunDir(args.out, "synth", merged, wcfg.rng_seed)
    try:
        samples = sample_dataset(wcfg, int(merged["n"]), merged["prevalence"])
        write_dataset(samples, run.path, wcfg)
        _write_json(run.path / "world_config.json", {**merged, "vocabulary": list(wcfg.vocabulary)})
        run.finish()
        print(f"wrote {len(samples)} samples to {run.path}")
        return 0
    finally:
        run.release()


def _load_prepared(dataset_dir: str, generator):
    wc_path = Path(dataset_dir) / "world_config.json"
    try:
        with open(wc_path) as fh:
            wmeta = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"dataset dir missing world_config.json: {exc}") from exc
    vocabulary = tuple(wmeta["vocabulary"])
    samples = read_dataset(dataset_dir, vocabulary)
    return prepare_dataset(generator, samples)


def cmd_train(args) -> int:
    defaults = {
        "dataset_dir": None,
        "generator": "a",
        **{k: v for k, v in asdict(TrainRunConfig()).items()},
    }
    overrides = {
        "seed": args.seed,
        "steps": args.steps,
        "source": {"tailored": "tailored", "gt": "ground_truth", None: None}[args.source],
        "generator": args.generator,
    }
    merged = _merged(defaults, _load_config(args.config), overrides)
    if not merged["dataset_dir"]:
        raise ConfigError("dataset_dir is required (config key or --config)")
    try:
        tcfg = TrainRunConfig(**{k: merged[k] for k in asdict(TrainRunConfig())})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    generator = load_generator(merged["generator"])
    dataset = _load_prepared(merged["dataset_dir"], generator)

    run = _RunDir(args.out, "train", merged, tcfg.seed)
    try:
        log_path = run.path / "train_log.jsonl"
        with open(log_path, "w") as log_fh:
            def log(step, loss):
                log_fh.write(json.dumps({"step": step, "loss": loss}) + "\n")

            checkpoints = train_run(dataset, tcfg, generator=generator, log_fn=log)
            for ck in checkpoints:
                log_fh.write(
                    json.dumps({"step": ck.step, "psnr_val": ck.psnr_val}) + "\n"
                )
        best = select_checkpoint(checkpoints)
        for ck in checkpoints:
            meta = {
                "step": ck.step,
                "psnr_val": ck.psnr_val,
                "generator_id": generator.generator_id,
                "conditioning": tcfg.conditioning,
                "word_vocab": list(ck.explainer.word_vocab) if ck.explainer.word_vocab else None,
                "ddim_steps": tcfg.ddim_steps,
                "source": tcfg.source,
            }
            save_checkpoint(
                run.path / f"ck_{ck.step:06d}.npz",
                ck.explainer.model,
                ck.explainer.schedule,
                dataset.vocabulary,
                meta,
            )
        _write_json(
            run.path / "selected.json",
            {
                "best_step": best.step,
                "psnr_val": best.psnr_val,
                "checkpoint": f"ck_{best.step:06d}.npz",
                "all": [{"step": c.step, "psnr_val": c.psnr_val} for c in checkpoints],
            },
        )
        run.finish()
        print(f"best checkpoint: step {best.step} (val PSNR {best.psnr_val:.2f} dB)")
        return 0
    finally:
        run.release()


def cmd_explain(args) -> int:
    defaults = {
        "checkpoint": None,
        "generator": "a",
        "dataset_dir": None,
        "image": None,
        "split": "test",
        "max_queries": None,
        "findings": None,  # restrict manipulations to these findings
        "frames": None,
        "seed": 0,
    }
    merged = _merged(
        defaults,
        _load_config(args.config),
        {"seed": args.seed, "generator": args.generator, "checkpoint": args.checkpoint,
         "image": args.image, "max_queries": args.max_queries},
    )
    if not merged["checkpoint"]:
        raise ConfigError("checkpoint is required")
    if not merged["dataset_dir"] and not merged["image"]:
        raise ConfigError("either dataset_dir or image is required")
    generator = load_generator(merged["generator"])
    explainer = _explainer_from_checkpoint(merged["checkpoint"])
    frame_cfg = _frame_config(merged, args)
    only = set(merged["findings"] or [])

    run = _RunDir(args.out, "explain", merged, merged["seed"])
    try:
        (run.path / "records").mkdir(exist_ok=True)
        (run.path / "images").mkdir(exist_ok=True)
        (run.path / "panels").mkdir(exist_ok=True)
        queries = []
        if merged["image"]:
            queries.append(("q00000", read_pgm(merged["image"]), None, None))
        else:
            dataset = _load_prepared(merged["dataset_dir"], generator)
            recs = dataset.split(merged["split"])
            if merged["max_queries"]:
                recs = recs[: int(merged["max_queries"])]
            queries = [(r.sample_id, r.image, r.gt_findings, r.gt_regions) for r in recs]

        index = []
        failures = 0
        for qid, image, gtf, gtr in queries:
            try:
                record = explain_query(
                    explainer, generator, image, qid, frame_cfg, gtf, gtr,
                    findings_filter=only or None,
                )
            except Exception as exc:  # per-query errors logged, run continues
                failures += 1
                index.append({"query_id": qid, "error": str(exc)})
                print(f"error on {qid}: {exc}", file=sys.stderr)
                continue
            rec_json = _record_to_json(record, run.path, generator.vocabulary)
            panel = emit_panel(record)
            panel_rel = f"panels/{qid}_panel.pgm"
            write_pgm(run.path / panel_rel, panel)
            rec_json["panel"] = panel_rel
            _write_json(run.path / "records" / f"{qid}.json", rec_json)
            index.append(
                {
                    "query_id": qid,
                    "record": f"records/{qid}.json",
                    "panel": panel_rel,
                    "n_manipulations": len(record.counterfactuals),
                    "note": None if record.counterfactuals else "no findings to remove",
                }
            )
        _write_json(run.path / "index.json", index)
        run.finish()
        print(f"explained {len(queries) - failures}/{len(queries)} queries -> {run.path}")
        return 0
    finally:
        run.release()


def _record_to_json(record, out_dir: Path, vocabulary: tuple[str, ...]) -> dict:
    qid = record.query_id
    img_rel = f"images/{qid}_query.pgm"
    rec_rel = f"images/{qid}_recon.pgm"
    write_pgm(out_dir / img_rel, record.query)
    write_pgm(out_dir / rec_rel, record.reconstruction)
    names = lambda flags: [n for n, a in zip(vocabulary, flags) if a]  # noqa: E731
    cfs = []
    for cf in record.counterfactuals:
        cf_rel = f"images/{qid}_cf_{cf.removed}.pgm"
        write_pgm(out_dir / cf_rel, cf.image)
        cfs.append(
            {
                "removed": cf.removed,
                "image": cf_rel,
                "edited_prompt": cf.edited_prompt,
                "regenerated_report": cf.regenerated_report,
                "regenerated_findings": names(cf.regenerated_findings),
                "success": cf.success,
                "preserved": cf.preserved,
                "psnr_vs_query": cf.psnr_vs_query,
                "frames": [list(b) for b in cf.frame.boxes],
            }
        )
    return {
        "query_id": qid,
        "generator_id": record.generator_id,
        "image": img_rel,
        "report": record.report_text,
        "inferred_findings": names(record.inferred),
        "gt_findings": names(record.gt_findings) if record.gt_findings is not None else None,
        "gt_regions": {k: list(v) for k, v in (record.gt_regions or {}).items()} or None,
        "reconstruction": rec_rel,
        "psnr_reconstruction": record.psnr_reconstruction,
        "counterfactuals": cfs,
    }


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run_dir)
    rec_dir = run_dir / "records"
    if not rec_dir.is_dir():
        raise ConfigError(f"{run_dir} has no records/ directory")
    files = sorted(rec_dir.glob("*.json"))
    if not files:
        raise RuntimeError(f"{rec_dir} is empty")
    n_images = 0
    n_man = n_suc = n_pres = 0
    per: dict[str, list[int]] = {}
    psnrs = []
    for path in files:
        with open(path) as fh:
            rec = json.load(fh)
        n_images += 1
        psnrs.append(rec["psnr_reconstruction"])
        for cf in rec["counterfactuals"]:
            n_man += 1
            n_suc += int(cf["success"])
            n_pres += int(cf["preserved"])
            per.setdefault(cf["removed"], [0, 0])
            per[cf["removed"]][0] += 1
            per[cf["removed"]][1] += int(cf["success"])
    report = {
        "n_images": n_images,
        "n_manipulations": n_man,
        "n_success": n_suc,
        "n_preserved": n_pres,
        "success_rate": (n_suc / n_man) if n_man else 0.0,
        "preservation_rate": (n_pres / n_man) if n_man else 0.0,
        "mean_psnr_reconstruction": float(np.mean(psnrs)) if psnrs else 0.0,
        "per_finding": {
            k: {"n_manipulations": v[0], "n_success": v[1],
                "success_rate": v[1] / v[0] if v[0] else 0.0}
            for k, v in sorted(per.items())
        },
    }
    _write_json(run_dir / "metrics.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    defaults = {
        "dataset_dir": None,
        "generator": "a",
        "variants": None,  # {name: checkpoint path}
        "split": "test",
        "max_queries": None,
        "frames": None,
        "seed": 0,
    }
    merged = _merged(defaults, _load_config(args.config),
                     {"seed": args.seed, "generator": args.generator})
    if not merged["dataset_dir"] or not merged["variants"]:
        raise ConfigError("dataset_dir and variants are required")
    generator = load_generator(merged["generator"])
    frame_cfg = _frame_config(merged, args)
    dataset = _load_prepared(merged["dataset_dir"], generator)
    recs = dataset.split(merged["split"])
    if merged["max_queries"]:
        recs = recs[: int(merged["max_queries"])]

    run = _RunDir(args.out, "ablate", merged, merged["seed"])
    try:
        by_variant = {}
        for name, ck_path in merged["variants"].items():
            explainer = _explainer_from_checkpoint(ck_path)
            by_variant[name] = [
                explain_query(explainer, generator, r.image, r.sample_id, frame_cfg,
                              r.gt_findings, r.gt_regions)
                for r in recs
            ]
        report = run_ablation(by_variant)
        _write_json(run.path / "ablation.json", report.to_dict())
        run.finish()
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        return 0
    finally:
        run.release()


def cmd_sweep_threshold(args) -> int:
    query = read_pgm(args.query)
    counterfactual = read_pgm(args.counterfactual)
    cfg = FrameConfig(blur_size=args.blur or 5)
    levels = [float(v) for v in args.levels.split(",")]
    rows = threshold_sweep(query, counterfactual, cfg, levels)
    print(json.dumps(rows, indent=2))
    return 0


def cmd_report(args) -> int:
    generator = load_generator(args.generator)
    image = read_pgm(args.image)
    print(generate_report(generator, image).text)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cyclex", description=__doc__)
    p.add_argument("--version", action="version", version=f"cyclex {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("synth", help="emit a phantom dataset")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train the editing model")
    common(sp)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--source", choices=["tailored", "gt"], default=None)
    sp.add_argument("--generator", default=None, help="a, b, or a spec JSON path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("explain", help="generate counterfactual records")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--generator", default=None)
    sp.add_argument("--image", default=None, help="explain a single PGM image")
    sp.add_argument("--max-queries", dest="max_queries", type=int, default=None)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--blur", type=int, default=None)
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("evaluate", help="success metrics for an explain run")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="compare model variants on one query set")
    common(sp)
    sp.add_argument("--generator", default=None)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--blur", type=int, default=None)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("sweep-threshold", help="mask area/components per level")
    sp.add_argument("--query", required=True)
    sp.add_argument("--counterfactual", required=True)
    sp.add_argument("--levels", default="75,85,95,105,115")
    sp.add_argument("--blur", type=int, default=None)
    sp.set_defaults(func=cmd_sweep_threshold)

    sp = sub.add_parser("report", help="print the generated report for an image")
    sp.add_argument("--generator", default="a")
    sp.add_argument("--image", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

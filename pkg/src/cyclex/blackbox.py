"""The frozen report generator under explanation, and the prompt grammar.

Everything downstream sees only the opaque surface: image in, templated
report out. Reports use one sentence per detected finding; a sentence
mentions exactly one finding name (underscores as spaces), which makes the
finding labeler an exact inverse rather than a learned classifier. Prompt
reorganization follows the fixed template

    "The lung with the abnormalities of X"

with X the comma-separated active finding names in vocabulary order, or the
literal token "none".
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

PROMPT_PREFIX = "The lung with the abnormalities of "
NONE_TOKEN = "none"
NORMAL_SENTENCE = "No acute cardiopulmonary abnormality is identified."

SHIPPED_GENERATORS = {"a": "generator_a.json", "b": "generator_b.json"}


class ReportParseError(ValueError):
    """A report or prompt does not follow the template grammar."""


@dataclass(frozen=True)
class Report:
    text: str


@dataclass(frozen=True)
class DecisionRule:
    region: tuple[int, int, int, int]  # half-open pixel box x0, y0, x1, y1
    stat: str  # "mean" or "p95"
    threshold: float

    def __post_init__(self):
        if self.stat not in ("mean", "p95"):
            raise ValueError(f"unknown statistic {self.stat!r}")
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    def evaluate(self, image: np.ndarray) -> float:
        x0, y0, x1, y1 = self.region
        patch = image[y0:y1, x0:x1]
        if self.stat == "mean":
            return float(patch.mean())
        return float(np.quantile(patch, 0.95))


@dataclass(frozen=True)
class GeneratorSpec:
    generator_id: str
    image_size: int
    vocabulary: tuple[str, ...]
    rules: dict[str, DecisionRule]
    templates: dict[str, str]

    def __post_init__(self):
        for name in self.vocabulary:
            if name not in self.rules:
                raise ValueError(f"{self.generator_id}: no decision rule for {name}")
            if name not in self.templates:
                raise ValueError(f"{self.generator_id}: no sentence template for {name}")
            mentioned = _findings_in_sentence(self.templates[name], self.vocabulary)
            if mentioned != [name]:
                raise ValueError(
                    f"{self.generator_id}: template for {name} must mention exactly "
                    f"that finding, found {mentioned}"
                )

    def decide(self, image: np.ndarray) -> np.ndarray:
        """The generator's internal decision vector (exposed for oracles only)."""
        if image.shape != (self.image_size, self.image_size):
            raise ValueError(
                f"image shape {image.shape} != expected "
                f"({self.image_size}, {self.image_size})"
            )
        return np.array(
            [self.rules[n].evaluate(image) > self.rules[n].threshold for n in self.vocabulary]
        )


def _findings_in_sentence(sentence: str, vocabulary: tuple[str, ...]) -> list[str]:
    lowered = sentence.lower()
    return [n for n in vocabulary if n.replace("_", " ") in lowered]


def generate_report(spec: GeneratorSpec, image: np.ndarray) -> Report:
    """One sentence per finding over threshold; a fixed sentence when none."""
    decisions = spec.decide(image)
    sentences = [spec.templates[n] for n, d in zip(spec.vocabulary, decisions) if d]
    if not sentences:
        return Report(text=NORMAL_SENTENCE)
    return Report(text=" ".join(sentences))


def extract_findings(report: Report, vocabulary: tuple[str, ...]) -> np.ndarray:
    """Exact inverse of sentence emission; raises on any unparseable sentence."""
    flags = np.zeros(len(vocabulary), dtype=bool)
    text = report.text.strip()
    if not text:
        raise ReportParseError("empty report")
    sentences = [s.strip() + "." for s in text.split(".") if s.strip()]
    for sentence in sentences:
        if sentence == NORMAL_SENTENCE:
            continue
        mentioned = _findings_in_sentence(sentence, vocabulary)
        if len(mentioned) != 1:
            raise ReportParseError(
                f"sentence mentions {len(mentioned)} findings, expected 1: {sentence!r}"
            )
        idx = vocabulary.index(mentioned[0])
        if flags[idx]:
            raise ReportParseError(f"duplicate finding sentence: {sentence!r}")
        flags[idx] = True
    return flags


def reorganize_prompt(findings: np.ndarray, vocabulary: tuple[str, ...]) -> str:
    findings = np.asarray(findings, dtype=bool)
    if findings.shape != (len(vocabulary),):
        raise ValueError("findings length != vocabulary size")
    active = [n for n, a in zip(vocabulary, findings) if a]
    return PROMPT_PREFIX + (", ".join(active) if active else NONE_TOKEN)


def parse_prompt(prompt: str, vocabulary: tuple[str, ...]) -> np.ndarray:
    """Exact inverse of reorganize_prompt (vocabulary order enforced)."""
    if not prompt.startswith(PROMPT_PREFIX):
        raise ReportParseError(f"prompt does not start with template prefix: {prompt!r}")
    body = prompt[len(PROMPT_PREFIX) :]
    flags = np.zeros(len(vocabulary), dtype=bool)
    if body == NONE_TOKEN:
        return flags
    names = body.split(", ")
    indices = []
    for name in names:
        if name not in vocabulary:
            raise ReportParseError(f"unknown finding {name!r} in prompt")
        indices.append(vocabulary.index(name))
    if indices != sorted(set(indices)):
        raise ReportParseError(f"findings not unique/in vocabulary order: {body!r}")
    flags[indices] = True
    return flags


def _spec_from_dict(data: dict) -> GeneratorSpec:
    try:
        vocabulary = tuple(data["vocabulary"])
        rules = {
            name: DecisionRule(
                region=tuple(r["region"]), stat=r["stat"], threshold=float(r["threshold"])
            )
            for name, r in data["rules"].items()
        }
        return GeneratorSpec(
            generator_id=data["generator_id"],
            image_size=int(data["image_size"]),
            vocabulary=vocabulary,
            rules=rules,
            templates=dict(data["templates"]),
        )
    except KeyError as exc:
        raise ValueError(f"generator spec missing field {exc}") from exc


def load_generator(path_or_name: str | os.PathLike) -> GeneratorSpec:
    """Load a GeneratorSpec from a JSON file or a shipped name ("a"/"b")."""
    key = str(path_or_name)
    if key in SHIPPED_GENERATORS:
        text = (
            resources.files("cyclex.configs").joinpath(SHIPPED_GENERATORS[key]).read_text()
        )
    else:
        with open(path_or_name) as fh:
            text = fh.read()
    return _spec_from_dict(json.loads(text))

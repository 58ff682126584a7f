"""Report generator surface: decision rules, grammar, prompt round trips."""

import itertools
import json

import numpy as np
import pytest

from cyclex.blackbox import (
    NONE_TOKEN,
    NORMAL_SENTENCE,
    PROMPT_PREFIX,
    Report,
    ReportParseError,
    extract_findings,
    generate_report,
    load_generator,
    parse_prompt,
    reorganize_prompt,
)
from cyclex.world import WorldConfig, render, sample_dataset

GEN = load_generator("a")
GEN_B = load_generator("b")
CFG = WorldConfig(rng_seed=1)
NF = len(CFG.vocabulary)


def test_all_false_renders_report_normal():
    for seed in range(100):
        img = render(CFG, np.zeros(NF, bool), seed=seed).image
        assert generate_report(GEN, img).text == NORMAL_SENTENCE


def test_report_deterministic():
    img = render(CFG, np.ones(NF, bool), seed=3).image
    assert generate_report(GEN, img).text == generate_report(GEN, img).text


def test_two_finding_render_true_positive_rate(capsys):
    f = np.zeros(NF, bool)
    f[CFG.vocabulary.index("cardiomegaly")] = True
    f[CFG.vocabulary.index("support_device")] = True
    hits = 0
    for seed in range(100):
        img = render(CFG, f, seed=seed).image
        rep = generate_report(GEN, img).text
        if "cardiomegaly" in rep and "support device" in rep:
            hits += 1
    with capsys.disabled():
        print(f"\n[blackbox] both-findings true-positive rate over 100 renders: {hits / 100:.2f}")
    # weak renders fall under the thresholds by design (~25% per finding)
    assert hits >= 40, hits


def test_extract_round_trips_decision_vector():
    samples = sample_dataset(WorldConfig(rng_seed=9), 1000, 0.35)
    for s in samples:
        direct = GEN.decide(s.image)  # oracle: evaluate the rules directly
        via_report = extract_findings(generate_report(GEN, s.image), GEN.vocabulary)
        assert np.array_equal(direct, via_report)


def test_extract_trivial_sentences():
    assert not extract_findings(Report(NORMAL_SENTENCE), GEN.vocabulary).any()
    one = extract_findings(Report(GEN.templates["cardiomegaly"]), GEN.vocabulary)
    assert [n for n, a in zip(GEN.vocabulary, one) if a] == ["cardiomegaly"]


def test_extract_rejects_unparseable():
    with pytest.raises(ReportParseError):
        extract_findings(Report("The weather is nice today."), GEN.vocabulary)
    with pytest.raises(ReportParseError):
        extract_findings(Report(""), GEN.vocabulary)
    dup = GEN.templates["effusion"] + " " + GEN.templates["effusion"]
    with pytest.raises(ReportParseError):
        extract_findings(Report(dup), GEN.vocabulary)


def test_reorganize_prompt_exact_strings():
    v = np.zeros(NF, bool)
    v[0] = True  # cardiomegaly
    v[3] = True  # effusion
    assert (
        reorganize_prompt(v, CFG.vocabulary)
        == "The lung with the abnormalities of cardiomegaly, effusion"
    )
    empty = np.zeros(NF, bool)
    assert reorganize_prompt(empty, CFG.vocabulary) == PROMPT_PREFIX + NONE_TOKEN


def test_prompt_round_trip_all_vectors():
    for bits in itertools.product([False, True], repeat=NF):
        v = np.array(bits)
        prompt = reorganize_prompt(v, CFG.vocabulary)
        assert prompt.startswith(PROMPT_PREFIX)
        assert np.array_equal(parse_prompt(prompt, CFG.vocabulary), v)


def test_parse_prompt_rejects_bad_input():
    with pytest.raises(ReportParseError):
        parse_prompt("The lung with the abnormalities of gremlins", CFG.vocabulary)
    with pytest.raises(ReportParseError):
        parse_prompt("Lungs with stuff", CFG.vocabulary)
    with pytest.raises(ReportParseError):  # out of vocabulary order
        parse_prompt(PROMPT_PREFIX + "effusion, cardiomegaly", CFG.vocabulary)


def test_generators_disagree_on_atelectasis_somewhere():
    samples = sample_dataset(WorldConfig(rng_seed=12), 200, 0.3)
    idx = GEN.vocabulary.index("atelectasis")
    disagreements = 0
    for s in samples:
        a = extract_findings(generate_report(GEN, s.image), GEN.vocabulary)
        b = extract_findings(generate_report(GEN_B, s.image), GEN_B.vocabulary)
        disagreements += int(a[idx] != b[idx])
    assert disagreements >= 1, "shipped specs must differ on atelectasis for some images"


def test_biased_generator_has_atelectasis_false_positives():
    samples = sample_dataset(WorldConfig(rng_seed=13), 300, 0.3)
    idx = GEN_B.vocabulary.index("atelectasis")
    fp = sum(
        1
        for s in samples
        if not s.gt_findings[idx]
        and extract_findings(generate_report(GEN_B, s.image), GEN_B.vocabulary)[idx]
    )
    assert fp >= 1, "generator b is supposed to over-call atelectasis"


def test_generator_rejects_wrong_image_size():
    with pytest.raises(ValueError):
        generate_report(GEN, np.zeros((32, 32)))


def test_spec_loadable_from_json_file(tmp_path):
    spec_dict = {
        "generator_id": "custom",
        "image_size": 64,
        "vocabulary": list(GEN.vocabulary),
        "rules": {
            n: {"region": list(r.region), "stat": r.stat, "threshold": r.threshold}
            for n, r in GEN.rules.items()
        },
        "templates": dict(GEN.templates),
    }
    path = tmp_path / "gen.json"
    path.write_text(json.dumps(spec_dict))
    spec = load_generator(path)
    assert spec.generator_id == "custom"
    img = render(CFG, np.ones(NF, bool), seed=1).image
    assert generate_report(spec, img).text == generate_report(GEN, img).text


def test_spec_validation_catches_bad_templates():
    import dataclasses

    from cyclex.blackbox import GeneratorSpec

    with pytest.raises(ValueError):
        GeneratorSpec(
            generator_id="broken",
            image_size=64,
            vocabulary=GEN.vocabulary,
            rules=dict(GEN.rules),
            templates={**GEN.templates, "cardiomegaly": "Nothing to see here."},
        )
    with pytest.raises(ValueError):
        rules = dict(GEN.rules)
        rules["cardiomegaly"] = dataclasses.replace(rules["cardiomegaly"], threshold=float("inf"))
        GeneratorSpec(
            generator_id="broken",
            image_size=64,
            vocabulary=GEN.vocabulary,
            rules=rules,
            templates=dict(GEN.templates),
        )

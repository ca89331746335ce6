"""Smoke test for the rarelex Python bindings.

Install first:  pip install crates/py   (or `maturin develop` inside crates/py)
Then run:       python python/smoke_test.py
"""

import json
import math
import tempfile
from pathlib import Path

import rarelex


def check_text_ops():
    assert rarelex.tokenize("Pt. is AFEBRILE, no SOB’s") == ["pt", "is", "afebrile", "no", "sob's"]
    assert rarelex.fold("Dyspnea") == "dyspnea"

    m = rarelex.ParaphraseMap([("afebrile", "having no fever", False), ("CHF", "congestive heart failure", True)])
    assert len(m) == 2 and "afebrile" in m
    text, spans = rarelex.augment_text("Hx of CHF, afebrile today.", m)
    assert text == "Hx of CHF (congestive heart failure), afebrile (having no fever) today.", text
    assert rarelex.strip_annotations(text, spans) == "Hx of CHF, afebrile today."
    assert rarelex.augment_text(text, m)[0] == text


def check_prompts_and_stats():
    rendered, offset, cands = rarelex.render_prompt("mednli", "He is afebrile", "He has a fever", "contradiction")
    assert rendered == "He is afebrile. [MASK]. He has a fever"
    assert rendered[offset:].startswith(rarelex.MASK)
    assert cands == ["Yes", "No", "maybe"]
    for label in ("entailment", "contradiction", "neutral"):
        assert rarelex.unverbalize("mednli", rarelex.verbalize("mednli", label)) == label
    try:
        rarelex.verbalize("mednli", "bogus")
    except rarelex.RarelexError:
        pass
    else:
        raise AssertionError("expected RarelexError")

    y, n = rarelex.score_to_target(3.2)
    assert abs(rarelex.prediction_to_score(y, n) - 3.2) < 1e-12

    assert abs(rarelex.pearson([1, 2, 3, 4], [2, 4, 6, 8.5]) - 0.9983814394570298) < 1e-9
    t, p, df, _ = rarelex.paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert p == 1.0 and df == 2 and t == 0.0
    assert rarelex.student_t_cdf(0.0, 7.0) == 0.5
    assert math.isclose(rarelex.student_t_cdf(2.0, 1.0), 0.5 + math.atan(2.0) / math.pi, rel_tol=1e-12)


def check_pipeline(tmp: Path):
    config = rarelex.write_fixture(str(tmp), seed=1, tokens=400_000, examples=200)
    table = rarelex.FrequencyTable.build([str(tmp / "corpus.txt")])
    assert table.total_tokens == 400_000
    m, stats = rarelex.ParaphraseMap.select(table, str(tmp / "lexicon.jsonl"), threshold=50)
    assert stats["included"] == len(m) > 0, stats

    cfg = json.loads(Path(config).read_text())
    train, dev = rarelex.sample_fewshot(str(tmp / cfg["dataset"]), "mednli", 16, 3)
    assert len(train) == 16 and not set(train) & set(dev)
    assert (train, dev) == rarelex.sample_fewshot(str(tmp / cfg["dataset"]), "mednli", 16, 3)

    manifest, reports = rarelex.run_pipeline(config, str(tmp / "a"))
    again, _ = rarelex.run_pipeline(config, str(tmp / "b"))
    assert manifest == again
    assert [stage for stage, _ in manifest] == ["freq", "lexicon", "select", "augment", "format", "sample", "score", "eval"]
    ((k, mean, base, p),) = reports
    assert k == 16 and mean == 1.0 and base == 1.0 and p == 1.0

    preds = tmp / "a" / "score" / "k16" / "seed0.aug.jsonl"
    prompts = tmp / "a" / "prompts.test.aug.jsonl"
    assert rarelex.validate_protocol(str(prompts), str(preds)) == []


def main():
    check_text_ops()
    check_prompts_and_stats()
    with tempfile.TemporaryDirectory() as d:
        check_pipeline(Path(d))
    print("rarelex smoke test: ok")


if __name__ == "__main__":
    main()

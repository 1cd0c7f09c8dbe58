"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -s` to see the lines as they pass.
The synthetic corpus is the only input; no OCR engine is required (the
sidecar stub answers all text recognition).
"""

import json
import time

import numpy as np
import pytest

from gelminer import evalgen, forest, ner
from gelminer.cli import (
    PipelineConfig,
    PipelineState,
    figure_examples,
    run_eval,
    run_extract,
    truth_path,
    write_records,
)
from gelminer.features import DIRECTIONS, GlcmConfig, extract_features, glcm, haralick13
from gelminer.imgio import BBox, GrayImage, RasterImage
from gelminer.ocr import TextRecognition
from gelminer.panels import PanelConfig, attach_labels, detect_regions, neighbors
from gelminer.segmentation import Segment, SegmentKind, SegmentSource

from oracles import auc_pair_count_oracle, glcm_oracle, haralick_oracle, oracle_regions

CORPUS_SEED = 20251130
CORPUS_SIZE = 200
FOREST_SEED = 9


def check(num: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# Shared corpus / model fixtures
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_corpus")
    figures = evalgen.generate(
        evalgen.SyntheticSpec(seed=CORPUS_SEED, figure_count=CORPUS_SIZE)
    )
    evalgen.write_corpus(figures, out)
    return out, figures


@pytest.fixture(scope="session")
def trained(corpus, tmp_path_factory):
    """Held-out training run, timed end to end (feature extraction through
    evaluation), plus the raw train/test example sets for reuse."""
    corpus_dir, _ = corpus
    cfg = PipelineConfig(input_dir=corpus_dir, model_path=None, seed=FOREST_SEED)
    state = PipelineState.build(cfg, need_model=False)
    from gelminer.cli import discover_figures

    started = time.perf_counter()
    annotated = [p for p in discover_figures(corpus_dir) if truth_path(p).exists()]
    train_paths, test_paths = annotated[0::2], annotated[1::2]

    def collect(paths):
        out = []
        for p in paths:
            out.extend(figure_examples(state, p, evalgen.load_truth(truth_path(p))))
        return out

    train_examples = collect(train_paths)
    test_examples = collect(test_paths)
    model = forest.train(train_examples, tree_count=75, seed=FOREST_SEED)
    scored = [(forest.score(model, ex.features), ex.label) for ex in test_examples]
    report = evalgen.classification_report(scored)
    duration = time.perf_counter() - started

    model_path = tmp_path_factory.mktemp("acceptance_model") / "model.json"
    forest.save_model(model, model_path)
    return {
        "model": model,
        "model_path": model_path,
        "train_examples": train_examples,
        "scored": scored,
        "report": report,
        "duration": duration,
    }


@pytest.fixture(scope="session")
def extracted(corpus, trained):
    corpus_dir, _ = corpus
    cfg = PipelineConfig(
        input_dir=corpus_dir, model_path=trained["model_path"], seed=FOREST_SEED
    )
    return run_extract(cfg)


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def test_criterion_01_feature_contract():
    rng = np.random.default_rng(1)
    gray_values = rng.integers(0, 256, size=(400, 400), dtype=np.uint8)
    img = RasterImage(np.stack([gray_values] * 3, axis=-1))
    gray = GrayImage(gray_values)
    segments = []
    for i in range(1000):
        x0 = int(rng.integers(0, 360))
        y0 = int(rng.integers(0, 360))
        box = BBox(x0, y0, x0 + int(rng.integers(0, 40)), y0 + int(rng.integers(0, 40)))
        segments.append(
            (Segment(i, box, SegmentKind.GRAPHIC, SegmentSource.COMPONENT),
             TextRecognition(i, "x" * int(rng.integers(0, 9)), int(rng.integers(0, 9))))
        )
    cfg = GlcmConfig()
    started = time.perf_counter()
    vectors = [extract_features(img, gray, seg, rec, cfg) for seg, rec in segments]
    elapsed = time.perf_counter() - started
    ok = all(
        v.shape == (39,) and np.all(np.isfinite(v)) and abs(v[6:22].sum() - 1.0) <= 1e-9
        for v in vectors
    )
    check(1, "feature contract on 1000 random segments", ok and elapsed < 1.0,
          f"{elapsed:.3f}s")


def test_criterion_02_haralick_oracle_equivalence():
    rng = np.random.default_rng(2)
    cfg = GlcmConfig()  # 32 levels, distance 1, symmetric
    worst = 0.0
    for _ in range(100):
        values = rng.integers(0, 256, size=(8, 8), dtype=np.uint8)
        gray = GrayImage(values)
        for direction in DIRECTIONS:
            P = glcm(gray, cfg, direction)
            P_oracle = glcm_oracle(values.tolist(), cfg.levels, direction,
                                   symmetric=cfg.symmetric)
            worst = max(worst, float(np.max(np.abs(P - np.array(P_oracle)))))
            got = haralick13(P)
            expected = haralick_oracle(P.tolist())
            worst = max(worst, float(np.max(np.abs(got - np.array(expected)))))
    check(2, "glcm + haralick13 match literal-formula oracle", worst <= 1e-9,
          f"max deviation {worst:.2e}")


def test_criterion_03_forest_determinism_and_thresholding(trained, tmp_path):
    model_a = forest.train(trained["train_examples"], tree_count=75, seed=FOREST_SEED)
    path_a, path_b = tmp_path / "a.json", tmp_path / "b.json"
    forest.save_model(model_a, path_a)
    forest.save_model(trained["model"], path_b)
    identical = path_a.read_bytes() == path_b.read_bytes()

    scored = trained["scored"]
    positive_sets = [
        {i for i, (s, _) in enumerate(scored) if s >= t} for t in (0.15, 0.30, 0.60)
    ]
    containment = positive_sets[2] <= positive_sets[1] <= positive_sets[0]
    recalls = [row.recall for row in trained["report"].rows]
    monotone = recalls[0] >= recalls[1] >= recalls[2]
    check(3, "forest byte-determinism and threshold monotonicity",
          identical and containment and monotone,
          f"recalls {recalls[0]:.3f}/{recalls[1]:.3f}/{recalls[2]:.3f}")


def test_criterion_04_desk_scale_classifier(corpus, trained):
    _, figures = corpus
    gel_figures = sum(1 for f in figures if f.truth.panels)
    auc = trained["report"].auc
    ok = (
        gel_figures / len(figures) >= 0.15
        and auc >= 0.95
        and trained["duration"] < 120.0
    )
    check(4, "held-out ROC AUC on 200-figure corpus", ok,
          f"auc {auc:.4f}, {gel_figures}/{len(figures)} gel figures, "
          f"{trained['duration']:.1f}s")


def test_criterion_05_panel_rule_boundaries():
    cfg = PanelConfig()

    def g(i, box):
        return Segment(i, box, SegmentKind.GRAPHIC, SegmentSource.COMPONENT)

    def t(i, box):
        return Segment(i, box, SegmentKind.TEXT, SegmentSource.COMPONENT, ocr_text="x")

    a = g(0, BBox(0, 0, 99, 99))
    results = [
        neighbors(a, g(1, BBox(150, 0, 249, 99)), [], cfg) is True,    # gap 50
        neighbors(a, g(1, BBox(151, 0, 250, 99)), [], cfg) is False,   # gap 51
        neighbors(a, g(1, BBox(120, 0, 219, 99)),
                  [t(2, BBox(105, 40, 114, 60))], cfg) is False,       # text in gap
        neighbors(a, g(1, BBox(120, 0, 219, 99)), [], cfg) is True,
    ]
    region = detect_regions([g(0, BBox(200, 100, 399, 199))], {0: 0.9}, cfg)[0]
    near30 = t(5, BBox(100, 120, 169, 140))   # nearest 30, farthest 99
    near31 = t(5, BBox(100, 120, 168, 140))
    far150 = t(5, BBox(49, 120, 169, 140))
    far151 = t(5, BBox(48, 120, 169, 140))
    results += [
        attach_labels(region, [near30], cfg).labels != (),
        attach_labels(region, [near31], cfg).labels == (),
        attach_labels(region, [far150], cfg).labels != (),
        attach_labels(region, [far151], cfg).labels == (),
    ]
    check(5, "panel rule boundary suite (50/51, 30/31, 150/151, text-block)",
          all(results), f"{sum(results)}/8 boundary cases")


def test_criterion_06_grouping_oracle_equivalence():
    rng = np.random.default_rng(6)
    cfg = PanelConfig()
    mismatches = 0
    for _ in range(500):
        n = int(rng.integers(1, 51))
        segments = []
        scores = {}
        for i in range(n):
            x0 = int(rng.integers(0, 560))
            y0 = int(rng.integers(0, 560))
            box = BBox(x0, y0, x0 + int(rng.integers(8, 120)),
                       y0 + int(rng.integers(8, 120)))
            if rng.random() < 0.2:
                segments.append(Segment(i, box, SegmentKind.TEXT,
                                        SegmentSource.COMPONENT, ocr_text=""))
            else:
                segments.append(Segment(i, box, SegmentKind.GRAPHIC,
                                        SegmentSource.COMPONENT))
                scores[i] = float(rng.choice([0.0, 0.1, 0.15, 0.3, 0.59, 0.6, 0.9]))
        got = {r.segment_ids for r in detect_regions(segments, scores, cfg)}
        expected = oracle_regions(
            [(s.id, s.bbox.as_tuple()) for s in segments
             if s.kind == SegmentKind.GRAPHIC],
            [s.bbox.as_tuple() for s in segments if s.kind == SegmentKind.TEXT],
            scores, cfg.high_recall_threshold, cfg.high_precision_threshold,
            cfg.neighbor_max_gap,
        )
        if got != expected:
            mismatches += 1
    check(6, "detect_regions equals brute-force oracle on 500 layouts",
          mismatches == 0, f"{mismatches} mismatching layouts")


def test_criterion_07_desk_scale_panel_precision(corpus, extracted, tmp_path):
    corpus_dir, _ = corpus
    records, summary = extracted
    out = tmp_path / "records.jsonl"
    write_records(records, summary, out)
    result = run_eval(out, corpus_dir, iou_threshold=0.5)
    check(7, "panel precision >= 0.90 at IoU 0.5", result["precision"] >= 0.90,
          f"precision {result['precision']:.3f}, recall {result['recall']:.3f} "
          f"(recall reported, unconstrained)")


def test_criterion_08_ner_rules():
    rules = ner.default_rules()
    lexicon = ner.GeneLexicon(entries={
        "actin": ("58",),
        # Pathological lexicon entries that the rules must keep out anyway:
        "min": ("x",), "DNA": ("x",), "IV": ("x",), "12": ("x",), "ab": ("x",),
    })
    from gelminer.panels import GelPanel, GelRegion

    def mentions(text):
        panel = GelPanel(
            region=GelRegion(frozenset({0}), BBox(0, 0, 9, 9)),
            labels=((0, text),),
        )
        return [m.token for m in ner.tag_mentions(panel, lexicon, rules)]

    never_emitted = list(ner.DOMAIN_STOPWORDS) + ["ab", "1", "12", "2024", "IV",
                                                  "XIV", "mmxiv"]
    ok = all(mentions(token) == [] for token in never_emitted)
    case = mentions("actin") == ["actin"] and mentions("ACTIN") == []
    tokens = (ner.tokenize("14-3-3σ") == ["14-3-3σ"]
              and ner.tokenize("(p-p38),") == ["p-p38"])
    check(8, "NER exclusion, case-sensitivity, tokenizer survival",
          ok and case and tokens)


def test_criterion_09_metric_self_consistency():
    f = evalgen.fscore(0.951, 0.379)
    formula_ok = abs(f - 0.542) <= 0.001
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 60))
        scored = [
            (float(rng.choice([0.0, 0.2, 0.4, 0.5, 0.5, 0.7, 0.9, 1.0])),
             bool(rng.integers(0, 2)))
            for _ in range(n)
        ]
        if len({label for _, label in scored}) < 2:
            continue
        worst = max(worst, abs(evalgen.roc_auc(scored) - auc_pair_count_oracle(scored)))
    check(9, "prf formula check and AUC trapezoid vs pair count",
          formula_ok and worst <= 1e-12,
          f"F(0.951, 0.379) = {f:.4f}, max AUC deviation {worst:.2e}")


def test_criterion_10_end_to_end_accounting(corpus, trained, extracted):
    corpus_dir, figures = corpus
    records, summary = extracted
    planted_labels = sum(f.truth.counters["labels"] for f in figures)
    planted_panels = sum(f.truth.counters["panels"] for f in figures)
    planted_genes = sum(f.truth.counters["label_genes"] for f in figures)
    accounting = (
        summary["processed_figures"] == len(figures)
        and summary["labels"] == planted_labels
        and summary["panels"] == planted_panels
        and summary["gene_tokens_in_labels"] == planted_genes
    )

    cfg1 = PipelineConfig(input_dir=corpus_dir, model_path=trained["model_path"],
                          seed=FOREST_SEED, workers=1)
    cfg2 = PipelineConfig(input_dir=corpus_dir, model_path=trained["model_path"],
                          seed=FOREST_SEED, workers=2)
    records_b, summary_b = run_extract(cfg1)
    records_c, summary_c = run_extract(cfg2)

    def stable(rs):
        out = []
        for r in rs:
            doc = r.to_dict()
            doc.pop("timings", None)
            out.append(doc)
        return json.dumps(out, sort_keys=True)

    summary_bytes = json.dumps(summary, sort_keys=True)
    deterministic = (
        summary_bytes == json.dumps(summary_b, sort_keys=True)
        and summary_bytes == json.dumps(summary_c, sort_keys=True)
        and stable(records) == stable(records_b) == stable(records_c)
    )
    check(10, "end-to-end accounting and run/worker determinism",
          accounting and deterministic,
          f"labels {summary['labels']}/{planted_labels}, "
          f"panels {summary['panels']}/{planted_panels}")

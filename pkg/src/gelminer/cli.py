"""Batch pipeline runner: generate / train / extract / eval subcommands.

`extract` streams one JSON record per figure plus a final summary document
(JSON lines). A failing figure is recorded with a non-ok status and never
aborts the run. Figure-level work is data-parallel; results are ordered by
figure id, so the worker count changes wall-clock time only. The summary
contains counters and ratios but no timings, so identical runs produce
identical summary bytes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from gelminer import evalgen, forest, ner, ocr, panels, segmentation
from gelminer.features import GlcmConfig, extract_features
from gelminer.imgio import BBox, DecodeError, decode_image, to_gray
from gelminer.ocr import OcrEngine, SidecarEngine
from gelminer.panels import GelPanel, PanelConfig
from gelminer.segmentation import (
    EmptyResult,
    Segment,
    SegmentKind,
    SegmentationConfig,
)

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
OCR_KIND_COVERAGE = 0.3  # recognized-character coverage that flips a segment to text


class ConfigError(Exception):
    """Bad paths or flags; aborts before any figure is processed."""


class SplitError(Exception):
    """Train and test splits overlap."""


@dataclass(frozen=True)
class PipelineConfig:
    input_dir: Path
    output_path: Path | None = None
    model_path: Path | None = None
    lexicon_path: Path | None = None       # None: packaged demo lexicon
    stoplist_path: Path | None = None      # None: packaged common-word list
    ocr_engine: str = "sidecar"            # "sidecar" | "command"
    ocr_command: str | None = None
    panel: PanelConfig = field(default_factory=PanelConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    glcm: GlcmConfig = field(default_factory=GlcmConfig)
    workers: int = 1
    seed: int = 0
    tree_count: int = forest.DEFAULT_TREE_COUNT
    max_failure_fraction: float = 0.1


@dataclass
class FigureRecord:
    figure_id: str
    status: str  # ok | decode_failed | no_segments | error
    error: str | None = None
    segments: list[dict] = field(default_factory=list)
    panels: list[dict] = field(default_factory=list)
    mentions: list[dict] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc: dict = {"figure_id": self.figure_id, "status": self.status}
        if self.status != "ok":
            if self.error:
                doc["error"] = self.error
            return doc
        doc["segments"] = self.segments
        doc["panels"] = self.panels
        doc["mentions"] = self.mentions
        doc["timings"] = self.timings
        return doc


def discover_figures(input_dir: Path) -> list[Path]:
    paths = [p for p in input_dir.iterdir()
             if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()]
    return sorted(paths, key=lambda p: p.stem)


def _sidecar_path(image_path: Path) -> Path:
    return image_path.with_name(image_path.stem + ".ocr.tsv")


def truth_path(image_path: Path) -> Path:
    return image_path.with_name(image_path.stem + ".truth.json")


def _make_engine(cfg: PipelineConfig, image_path: Path) -> OcrEngine:
    if cfg.ocr_engine == "command":
        return ocr.CommandEngine(cfg.ocr_command or "")
    sidecar = _sidecar_path(image_path)
    if sidecar.exists():
        return ocr.load_sidecar(sidecar)
    return SidecarEngine([])


def detect_all_segments(gray, cfg: SegmentationConfig) -> list[Segment]:
    """Component detector united with the low-contrast rectangle detector."""
    try:
        components = segmentation.detect_segments(gray, cfg)
    except EmptyResult:
        components = []
    rectangles = segmentation.detect_lowcontrast_rectangles(gray, cfg)
    return segmentation.merge_segment_lists(components, rectangles, cfg)


def _apply_recognition(
    segments: list[Segment],
    recognitions: dict[int, ocr.TextRecognition],
    engine: OcrEngine,
) -> list[Segment]:
    """Fill ocr_text and flip a segment to text when the engine reports
    characters covering enough of its area."""
    revised = []
    for seg in segments:
        rec = recognitions[seg.id]
        kind = seg.kind
        if kind != SegmentKind.TEXT and rec.text:
            box = engine.text_box(seg)
            if box is not None:
                coverage = box.intersection_area(seg.bbox) / seg.bbox.area
                if coverage >= OCR_KIND_COVERAGE:
                    kind = SegmentKind.TEXT
        revised.append(replace(seg, kind=kind, ocr_text=rec.text))
    return revised


# Per-worker state; built once per process by the pool initializer.
_STATE: "PipelineState | None" = None


@dataclass
class PipelineState:
    cfg: PipelineConfig
    model: forest.ForestModel | None
    lexicon: ner.GeneLexicon
    rules: ner.ExclusionRules

    @classmethod
    def build(cls, cfg: PipelineConfig, need_model: bool = True) -> "PipelineState":
        if cfg.ocr_engine not in ("sidecar", "command"):
            raise ConfigError(f"unknown OCR engine: {cfg.ocr_engine}")
        if cfg.ocr_engine == "command" and not cfg.ocr_command:
            raise ConfigError("--ocr-command is required with the command engine")
        model = None
        if need_model:
            if cfg.model_path is None:
                raise ConfigError("a model file is required")
            model = forest.load_model(cfg.model_path)
        lexicon = (
            ner.GeneLexicon.load(cfg.lexicon_path)
            if cfg.lexicon_path
            else ner.default_lexicon()
        )
        if cfg.stoplist_path:
            rules = ner.ExclusionRules(common_words=ner.load_stoplist(cfg.stoplist_path))
        else:
            rules = ner.default_rules()
        return cls(cfg=cfg, model=model, lexicon=lexicon, rules=rules)


def _init_worker(cfg: PipelineConfig) -> None:
    global _STATE
    _STATE = PipelineState.build(cfg)


def _segment_dict(seg: Segment, rec: ocr.TextRecognition, score: float | None) -> dict:
    return {
        "id": seg.id,
        "bbox": list(seg.bbox.as_tuple()),
        "kind": seg.kind.value,
        "source": seg.source.value,
        "text": rec.text,
        "char_count": rec.char_count,
        "score": score,
    }


def _panel_dict(panel: GelPanel, report: panels.PanelReport, panel_id: int) -> dict:
    return {
        "id": panel_id,
        "region": {
            "segment_ids": sorted(panel.region.segment_ids),
            "bbox": list(panel.region.union_bbox.as_tuple()),
        },
        "labels": [{"segment_id": sid, "text": text} for sid, text in panel.labels],
        "report": {
            "rows": [list(row) for row in report.rows],
            "columns": [list(col) for col in report.columns],
            "label_sides": [
                {"segment_id": sid, "text": text, "side": side}
                for sid, text, side in report.labels
            ],
        },
    }


def process_figure(state: PipelineState, image_path: Path) -> tuple[FigureRecord, dict]:
    """Run one figure through segmentation, OCR, classification, panel
    grouping, and NER. Returns the record plus token counters for the
    corpus summary."""
    figure_id = image_path.stem
    counters = {"label_tokens": 0, "label_genes": 0, "text_tokens": 0, "text_genes": 0,
                "panels": 0, "labels": 0, "segments": 0}
    timings: dict[str, float] = {}
    start = time.perf_counter()

    try:
        try:
            img = decode_image(image_path.read_bytes())
        except (DecodeError, OSError) as exc:
            return FigureRecord(figure_id, "decode_failed", error=str(exc)), counters
        gray = to_gray(img)
        timings["decode_s"] = time.perf_counter() - start

        t = time.perf_counter()
        segments = detect_all_segments(gray, state.cfg.segmentation)
        if not segments:
            return FigureRecord(figure_id, "no_segments"), counters
        timings["segment_s"] = time.perf_counter() - t

        t = time.perf_counter()
        engine = _make_engine(state.cfg, image_path)
        recognitions = {seg.id: ocr.recognize(engine, img, seg) for seg in segments}
        segments = _apply_recognition(segments, recognitions, engine)
        timings["ocr_s"] = time.perf_counter() - t

        t = time.perf_counter()
        graphic = [s for s in segments if s.kind == SegmentKind.GRAPHIC]
        scores: dict[int, float] = {}
        if graphic:
            X = np.stack([
                extract_features(img, gray, s, recognitions[s.id], state.cfg.glcm)
                for s in graphic
            ])
            assert state.model is not None
            for seg, value in zip(graphic, forest.score_batch(state.model, X)):
                scores[seg.id] = float(value)
        timings["classify_s"] = time.perf_counter() - t

        t = time.perf_counter()
        text_segments = [s for s in segments if s.kind == SegmentKind.TEXT]
        regions = panels.detect_regions(segments, scores, state.cfg.panel)
        gel_panels = [panels.attach_labels(r, text_segments, state.cfg.panel)
                      for r in regions]
        reports = [panels.panel_report(p, segments) for p in gel_panels]
        timings["panels_s"] = time.perf_counter() - t

        t = time.perf_counter()
        mentions = []
        for panel_id, panel in enumerate(gel_panels):
            mentions.extend(ner.tag_mentions(panel, state.lexicon, state.rules, panel_id))
        timings["ner_s"] = time.perf_counter() - t
        timings["total_s"] = time.perf_counter() - start

        counters["segments"] = len(segments)
        counters["panels"] = len(gel_panels)
        counters["labels"] = sum(len(p.labels) for p in gel_panels)
        label_texts = {sid: text for p in gel_panels for sid, text in p.labels}
        for text in label_texts.values():
            for token in ner.tokenize(text):
                counters["label_tokens"] += 1
                if not ner.is_excluded(token, state.rules) and token in state.lexicon:
                    counters["label_genes"] += 1
        for seg in text_segments:
            for token in ner.tokenize(seg.ocr_text or ""):
                counters["text_tokens"] += 1
                if not ner.is_excluded(token, state.rules) and token in state.lexicon:
                    counters["text_genes"] += 1

        record = FigureRecord(
            figure_id=figure_id,
            status="ok",
            segments=[
                _segment_dict(s, recognitions[s.id], scores.get(s.id)) for s in segments
            ],
            panels=[
                _panel_dict(p, r, i)
                for i, (p, r) in enumerate(zip(gel_panels, reports))
            ],
            mentions=[
                {"token": m.token, "gene_ids": list(m.gene_ids),
                 "segment_id": m.segment_id, "panel_id": m.panel_id}
                for m in mentions
            ],
            timings={k: round(v, 6) for k, v in timings.items()},
        )
        return record, counters
    except Exception as exc:  # per-figure isolation: never abort the corpus
        logger.exception("figure %s failed", figure_id)
        return FigureRecord(figure_id, "error", error=f"{type(exc).__name__}: {exc}"), counters


def _process_figure_worker(path_str: str) -> tuple[FigureRecord, dict]:
    assert _STATE is not None
    return process_figure(_STATE, Path(path_str))


def run_extract(cfg: PipelineConfig) -> tuple[list[FigureRecord], dict]:
    """Process every figure under cfg.input_dir; returns ordered records and
    the corpus summary."""
    if not cfg.input_dir.is_dir():
        raise ConfigError(f"input dir not found: {cfg.input_dir}")
    if cfg.workers < 1:
        raise ConfigError("worker count must be >= 1")
    state = PipelineState.build(cfg)  # validates engine/model/lexicon up front

    paths = discover_figures(cfg.input_dir)
    if cfg.workers == 1 or len(paths) <= 1:
        results = [process_figure(state, p) for p in paths]
    else:
        with ProcessPoolExecutor(
            max_workers=cfg.workers, initializer=_init_worker, initargs=(cfg,)
        ) as pool:
            results = list(pool.map(_process_figure_worker, [str(p) for p in paths]))

    records = [record for record, _ in results]
    summary = _summarize(records, [c for _, c in results])
    return records, summary


def _summarize(records: list[FigureRecord], counters: list[dict]) -> dict:
    total = len(records)
    processed = sum(1 for r in records if r.status == "ok")
    decode_failed = sum(1 for r in records if r.status == "decode_failed")
    no_segments = sum(1 for r in records if r.status == "no_segments")
    errors = sum(1 for r in records if r.status == "error")
    agg = {key: sum(c[key] for c in counters)
           for key in ("segments", "panels", "labels", "label_tokens", "label_genes",
                       "text_tokens", "text_genes")}
    summary = {
        "summary": True,
        "total_figures": total,
        "processed_figures": processed,
        "decode_failed": decode_failed,
        "no_segments": no_segments,
        "errors": errors,
        "segments": agg["segments"],
        "panels": agg["panels"],
        "labels": agg["labels"],
        "panels_per_figure": agg["panels"] / processed if processed else 0.0,
        "labels_per_panel": agg["labels"] / agg["panels"] if agg["panels"] else 0.0,
        "label_tokens": agg["label_tokens"],
        "gene_tokens_in_labels": agg["label_genes"],
        "text_tokens": agg["text_tokens"],
        "gene_tokens": agg["text_genes"],
        "gene_token_ratio_in_labels": (
            agg["label_genes"] / agg["label_tokens"] if agg["label_tokens"] else None
        ),
        "gene_token_ratio": (
            agg["text_genes"] / agg["text_tokens"] if agg["text_tokens"] else None
        ),
    }
    return summary


def write_records(records: list[FigureRecord], summary: dict, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")
        fh.write(json.dumps(summary, sort_keys=True, ensure_ascii=False))
        fh.write("\n")


def figure_examples(
    state: PipelineState, image_path: Path, truth: evalgen.GroundTruth
) -> list[forest.LabeledExample]:
    """Detected segments of one annotated figure as labeled training examples.
    A segment is positive when it overlaps a ground-truth gel cell at
    IoU >= 0.5."""
    img = decode_image(image_path.read_bytes())
    gray = to_gray(img)
    segments = detect_all_segments(gray, state.cfg.segmentation)
    engine = _make_engine(state.cfg, image_path)
    examples = []
    for seg in segments:
        rec = ocr.recognize(engine, img, seg)
        vector = extract_features(img, gray, seg, rec, state.cfg.glcm)
        label = any(seg.bbox.iou(cell) >= 0.5 for cell in truth.gel_cells)
        examples.append(forest.LabeledExample(features=vector, label=label))
    return examples


def run_train(
    cfg: PipelineConfig,
    train_ids: list[str] | None = None,
    test_ids: list[str] | None = None,
) -> tuple[forest.ForestModel, evalgen.EvalReport]:
    """Train on half the annotated corpus, evaluate on the held-out half,
    write the model file. Explicit id lists override the default even/odd
    split and must be disjoint."""
    if not cfg.input_dir.is_dir():
        raise ConfigError(f"input dir not found: {cfg.input_dir}")
    state = PipelineState.build(cfg, need_model=False)
    annotated = [p for p in discover_figures(cfg.input_dir) if truth_path(p).exists()]
    if not annotated:
        raise ConfigError(f"no annotated figures (*.truth.json) in {cfg.input_dir}")

    if train_ids is not None or test_ids is not None:
        train_set = set(train_ids or [])
        test_set = set(test_ids or [])
        shared = train_set & test_set
        if shared:
            raise SplitError(f"splits overlap: {sorted(shared)}")
        train_paths = [p for p in annotated if p.stem in train_set]
        test_paths = [p for p in annotated if p.stem in test_set]
    else:
        train_paths = annotated[0::2]
        test_paths = annotated[1::2]

    def collect(paths: list[Path]) -> list[forest.LabeledExample]:
        examples = []
        for p in paths:
            examples.extend(figure_examples(state, p, evalgen.load_truth(truth_path(p))))
        return examples

    train_examples = collect(train_paths)
    test_examples = collect(test_paths)
    model = forest.train(train_examples, tree_count=cfg.tree_count, seed=cfg.seed)
    scored = [
        (forest.score(model, ex.features), ex.label) for ex in test_examples
    ]
    report = evalgen.classification_report(scored)
    if cfg.model_path is not None:
        forest.save_model(model, cfg.model_path)
    return model, report


def run_eval(predictions_path: Path, truth_dir: Path, iou_threshold: float = 0.5) -> dict:
    """Panel-level precision/recall/F of an extract run against ground truth,
    micro-averaged over figures with greedy IoU matching per figure."""
    if not predictions_path.is_file():
        raise ConfigError(f"predictions file not found: {predictions_path}")
    if not truth_dir.is_dir():
        raise ConfigError(f"truth dir not found: {truth_dir}")
    predicted: dict[str, list[BBox]] = {}
    for line in predictions_path.read_text(encoding="utf-8").splitlines():
        doc = json.loads(line)
        if doc.get("summary"):
            continue
        boxes = [BBox(*p["region"]["bbox"]) for p in doc.get("panels", [])]
        predicted[doc["figure_id"]] = boxes

    matched = n_predicted = n_truth = 0
    for truth_file in sorted(truth_dir.glob("*.truth.json")):
        truth = evalgen.load_truth(truth_file)
        result = evalgen.prf(
            predicted.get(truth.figure_id, []),
            [p.union for p in truth.panels],
            iou_threshold,
        )
        matched += result.matched
        n_predicted += result.predicted_count
        n_truth += result.truth_count
    precision = matched / n_predicted if n_predicted else 0.0
    recall = matched / n_truth if n_truth else 0.0
    return {
        "precision": precision,
        "recall": recall,
        "f_score": evalgen.fscore(precision, recall),
        "matched": matched,
        "predicted_panels": n_predicted,
        "truth_panels": n_truth,
    }


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lexicon", type=Path, default=None,
                        help="gene lexicon TSV (default: packaged demo lexicon)")
    parser.add_argument("--stoplist", type=Path, default=None,
                        help="common-word stoplist (default: packaged list)")
    parser.add_argument("--ocr", choices=("sidecar", "command"), default="sidecar")
    parser.add_argument("--ocr-command", default=None,
                        help="external OCR command (PNG on stdin, text on stdout)")
    parser.add_argument("--threshold-hp", type=float, default=0.60)
    parser.add_argument("--threshold-hr", type=float, default=0.15)
    parser.add_argument("--neighbor-gap", type=int, default=50)
    parser.add_argument("--label-near", type=int, default=30)
    parser.add_argument("--label-far", type=int, default=150)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)


def _pipeline_config(args: argparse.Namespace, input_dir: Path,
                     output: Path | None = None, model: Path | None = None) -> PipelineConfig:
    try:
        panel = PanelConfig(
            neighbor_max_gap=args.neighbor_gap,
            label_near_max=args.label_near,
            label_far_max=args.label_far,
            high_precision_threshold=args.threshold_hp,
            high_recall_threshold=args.threshold_hr,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return PipelineConfig(
        input_dir=input_dir,
        output_path=output,
        model_path=model,
        lexicon_path=args.lexicon,
        stoplist_path=args.stoplist,
        ocr_engine=args.ocr,
        ocr_command=args.ocr_command,
        panel=panel,
        workers=args.workers,
        seed=args.seed,
        tree_count=getattr(args, "trees", forest.DEFAULT_TREE_COUNT),
        max_failure_fraction=getattr(args, "max_failure_fraction", 0.1),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gelminer",
        description="Detect gel panels in figure rasters and tag gene names in their labels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic annotated corpus")
    p_gen.add_argument("--output", type=Path, required=True)
    p_gen.add_argument("--figures", type=int, default=20)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--gel-fraction", type=float, default=0.5)

    p_train = sub.add_parser("train", help="train the gel classifier on an annotated corpus")
    p_train.add_argument("--input", type=Path, required=True)
    p_train.add_argument("--model", type=Path, required=True)
    p_train.add_argument("--report", type=Path, default=None)
    p_train.add_argument("--trees", type=int, default=forest.DEFAULT_TREE_COUNT)
    _add_pipeline_flags(p_train)

    p_ext = sub.add_parser("extract", help="run the full pipeline over a corpus")
    p_ext.add_argument("--input", type=Path, required=True)
    p_ext.add_argument("--output", type=Path, required=True)
    p_ext.add_argument("--model", type=Path, required=True)
    p_ext.add_argument("--max-failure-fraction", type=float, default=0.1)
    _add_pipeline_flags(p_ext)

    p_eval = sub.add_parser("eval", help="score extracted panels against ground truth")
    p_eval.add_argument("--predictions", type=Path, required=True)
    p_eval.add_argument("--truth", type=Path, required=True)
    p_eval.add_argument("--output", type=Path, default=None)
    p_eval.add_argument("--iou", type=float, default=0.5)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            spec = evalgen.SyntheticSpec(
                seed=args.seed, figure_count=args.figures, gel_fraction=args.gel_fraction
            )
            evalgen.write_corpus(evalgen.generate(spec), args.output)
            print(f"wrote {args.figures} figures to {args.output}")
            return 0

        if args.command == "train":
            cfg = _pipeline_config(args, args.input, model=args.model)
            _, report = run_train(cfg)
            doc = report.to_dict()
            if args.report:
                args.report.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
            for row in doc["thresholds"]:
                print(
                    f"threshold {row['threshold']:.2f}: precision {row['precision']:.3f} "
                    f"recall {row['recall']:.3f} f {row['f_score']:.3f}"
                )
            print(f"auc {doc['auc']:.4f}")
            return 0

        if args.command == "extract":
            cfg = _pipeline_config(args, args.input, output=args.output, model=args.model)
            records, summary = run_extract(cfg)
            write_records(records, summary, args.output)
            failed = summary["total_figures"] - summary["processed_figures"]
            print(
                f"processed {summary['processed_figures']}/{summary['total_figures']} figures, "
                f"{summary['panels']} panels, {summary['labels']} labels"
            )
            if summary["total_figures"]:
                if failed / summary["total_figures"] > cfg.max_failure_fraction:
                    return 2
            return 0

        if args.command == "eval":
            result = run_eval(args.predictions, args.truth, args.iou)
            if args.output:
                args.output.write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
            print(
                f"panel precision {result['precision']:.3f} recall {result['recall']:.3f} "
                f"f {result['f_score']:.3f}"
            )
            return 0
    except (ConfigError, evalgen.SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (forest.SingleClassData, SplitError, forest.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

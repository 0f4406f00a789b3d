"""Annotation ingestion, batch fusion/assessment runs, and report emission.

The annotation index is a single JSON document (see README for the schema):
a version field plus one record per aligned pair, each carrying the image
paths, 1-3 sentence descriptions per annotator, and optional heat-map /
instance-map references. Paths resolve relative to the index file.

Batch runs are deterministic for a fixed config: records execute on a
bounded thread pool and the report is assembled in sorted row order, so the
parallelism degree never changes the output bytes.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import imgio
from .assessment import METRIC_NAMES, ScoreTable, mean_rank
from .association import AssociationConfig
from .imagery import GrayImage, InstanceMap, to_luminance
from .pipeline import run_assessment, run_fusion

__all__ = [
    "AnnotationError",
    "Description",
    "AnnotationRecord",
    "BatchConfig",
    "load_annotations",
    "concat_descriptions",
    "load_batch_config",
    "run_batch",
    "load_report",
    "report_to_csv",
    "compute_aggregate",
    "ANNOTATOR_CLASSES",
    "MAX_SENTENCES",
]

ANNOTATOR_CLASSES = ("group", "specialist", "nonspecialist")
MAX_SENTENCES = 3
REPORT_VERSION = 1
INDEX_VERSION = 1


class AnnotationError(ValueError):
    """Schema violation; message names the record and field."""


@dataclass(frozen=True)
class Description:
    annotator_class: str
    sentences: tuple[str, ...]


@dataclass(frozen=True)
class AnnotationRecord:
    pair_id: str
    ir_path: Path
    vis_path: Path
    descriptions: tuple[Description, ...]
    heatmap_dir: Path | None = None
    instance_path: Path | None = None


def _check_description(pair_id: str, idx: int, raw) -> Description:
    where = f"record {pair_id}: descriptions[{idx}]"
    if not isinstance(raw, dict):
        raise AnnotationError(f"{where} must be an object")
    cls = raw.get("annotator_class")
    if cls not in ANNOTATOR_CLASSES:
        raise AnnotationError(f"{where}.annotator_class {cls!r} not in {ANNOTATOR_CLASSES}")
    sentences = raw.get("sentences")
    if not isinstance(sentences, list) or not all(isinstance(s, str) for s in sentences):
        raise AnnotationError(f"{where}.sentences must be a list of strings")
    if not 1 <= len(sentences) <= MAX_SENTENCES:
        raise AnnotationError(
            f"{where}.sentences has {len(sentences)} sentences (must be 1-{MAX_SENTENCES})"
        )
    return Description(annotator_class=cls, sentences=tuple(sentences))


def load_annotations(index_path: str | Path) -> list[AnnotationRecord]:
    """Parse and validate an annotation index; image paths must resolve."""
    index_path = Path(index_path)
    if not index_path.exists():
        raise FileNotFoundError(f"annotation index not found: {index_path}")
    try:
        doc = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed annotation index {index_path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != INDEX_VERSION:
        raise AnnotationError(f"{index_path}: missing or unsupported version field")
    base = index_path.parent
    records = []
    seen = set()
    for i, raw in enumerate(doc.get("pairs", [])):
        pair_id = raw.get("id")
        if not isinstance(pair_id, str) or not pair_id:
            raise AnnotationError(f"pairs[{i}]: missing id")
        if pair_id in seen:
            raise AnnotationError(f"record {pair_id}: duplicate id")
        seen.add(pair_id)
        missing = [k for k in ("ir", "vis", "descriptions") if k not in raw]
        if missing:
            raise AnnotationError(f"record {pair_id}: missing fields {missing}")
        ir_path = base / raw["ir"]
        vis_path = base / raw["vis"]
        unresolved = [str(p) for p in (ir_path, vis_path) if not p.exists()]
        if unresolved:
            raise AnnotationError(f"record {pair_id}: unresolvable image paths {unresolved}")
        descriptions = tuple(
            _check_description(pair_id, j, d) for j, d in enumerate(raw["descriptions"])
        )
        if not descriptions:
            raise AnnotationError(f"record {pair_id}: descriptions must be nonempty")
        heatmap_dir = base / raw["heatmaps"] if "heatmaps" in raw else None
        instance_path = base / raw["instances"] if "instances" in raw else None
        if heatmap_dir is not None and not heatmap_dir.is_dir():
            raise AnnotationError(f"record {pair_id}: heat-map directory {heatmap_dir} missing")
        if instance_path is not None and not instance_path.exists():
            raise AnnotationError(f"record {pair_id}: instance map {instance_path} missing")
        records.append(
            AnnotationRecord(
                pair_id=pair_id,
                ir_path=ir_path,
                vis_path=vis_path,
                descriptions=descriptions,
                heatmap_dir=heatmap_dir,
                instance_path=instance_path,
            )
        )
    return records


def concat_descriptions(record: AnnotationRecord, k: int) -> list[str]:
    """All size-k sentence subsets per description, in original order, space-joined.

    Descriptions with fewer than k sentences contribute nothing; k must not
    exceed the longest description.
    """
    longest = max(len(d.sentences) for d in record.descriptions)
    if not 1 <= k <= longest:
        raise ValueError(
            f"record {record.pair_id}: subset size {k} out of range 1-{longest}"
        )
    out = []
    for desc in record.descriptions:
        for combo in combinations(desc.sentences, k):
            out.append(" ".join(combo))
    return out


def full_description(record: AnnotationRecord) -> str:
    return " ".join(s for d in record.descriptions for s in d.sentences)


@dataclass(frozen=True)
class BatchConfig:
    index_path: Path
    output_dir: Path
    alpha: float = 0.5
    tau_b: float = 0.35
    lexicon: tuple[str, ...] = ()
    squared_weights: bool = True
    softmax_c: float = 1.0
    metrics: tuple[str, ...] = METRIC_NAMES
    strict_support: bool = False
    parallelism: int = 1
    desc_subset: int | None = None
    competitor_scores: Path | None = None

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


def load_batch_config(path: str | Path) -> BatchConfig:
    """Read a TOML run config; relative paths resolve against the file."""
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    base = path.parent

    def _resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    dataset = doc.get("dataset", {})
    if "index" not in dataset:
        raise ValueError(f"{path}: [dataset].index is required")
    output = doc.get("output", {})
    if "directory" not in output:
        raise ValueError(f"{path}: [output].directory is required")
    assoc = doc.get("association", {})
    fusion = doc.get("fusion", {})
    assessment = doc.get("assessment", {})
    run = doc.get("run", {})
    competitors = assessment.get("competitor_scores")
    return BatchConfig(
        index_path=_resolve(dataset["index"]),
        output_dir=_resolve(output["directory"]),
        alpha=float(assoc.get("alpha", 0.5)),
        tau_b=float(assoc.get("tau_b", 0.35)),
        lexicon=tuple(assoc.get("lexicon", ())),
        squared_weights=bool(fusion.get("squared_weights", True)),
        softmax_c=float(fusion.get("softmax_c", 1.0)),
        metrics=tuple(assessment.get("metrics", METRIC_NAMES)),
        strict_support=bool(assessment.get("strict_support", False)),
        parallelism=int(run.get("parallelism", 1)),
        desc_subset=int(run["desc_subset"]) if "desc_subset" in run else None,
        competitor_scores=_resolve(competitors) if competitors else None,
    )


def load_pair_images(record: AnnotationRecord) -> tuple[GrayImage, GrayImage]:
    """IR and visible luminance; color visible inputs are converted."""
    ir = imgio.load_gray(record.ir_path)
    try:
        vis = imgio.load_gray(record.vis_path)
    except imgio.ImageFormatError:
        vis = to_luminance(imgio.load_color(record.vis_path))
    return ir, vis


def _evaluate_one(record: AnnotationRecord, text: str, suffix: str, cfg: BatchConfig) -> dict:
    ir, vis = load_pair_images(record)
    instances: InstanceMap | None = None
    if record.instance_path is not None:
        instances = imgio.load_instance_map(record.instance_path)
    heatmaps = None
    if record.heatmap_dir is not None:
        heatmaps = imgio.load_heatmap_dir(record.heatmap_dir) or None
    assoc_cfg = AssociationConfig(
        tau_b=cfg.tau_b, alpha=cfg.alpha, lexicon=frozenset(cfg.lexicon)
    )
    out = run_fusion(
        ir,
        vis,
        text=text,
        instances=instances,
        cfg=assoc_cfg,
        heatmaps=heatmaps,
        squared_weights=cfg.squared_weights,
        softmax_c=cfg.softmax_c,
    )
    fused_name = f"{record.pair_id}{suffix}.png"
    imgio.save_gray(out.fused, cfg.output_dir / fused_name)
    results, plain, c_t = run_assessment(
        out.fused, ir, vis, out.association, metrics=cfg.metrics,
        strict_support=cfg.strict_support,
    )
    metrics: dict = {r.name: {"q_o": r.q_o, "q_plus": r.q_plus} for r in results}
    metrics.update(plain)
    return {
        "pair_id": record.pair_id,
        "description": text,
        "fused": fused_name,
        "c_t": c_t,
        "metrics": metrics,
    }


def _run_record(record: AnnotationRecord, cfg: BatchConfig) -> tuple[list[dict], list[dict]]:
    rows, failures = [], []
    try:
        if cfg.desc_subset is None:
            texts = [full_description(record)]
        else:
            texts = concat_descriptions(record, cfg.desc_subset)
        for j, text in enumerate(texts):
            suffix = "" if len(texts) == 1 else f"_d{j:02d}"
            rows.append(_evaluate_one(record, text, suffix, cfg))
    except Exception as exc:  # noqa: BLE001 - record isolation is the contract
        failures.append({"pair_id": record.pair_id, "error": f"{type(exc).__name__}: {exc}"})
    return rows, failures


REFERENCE_ORDER = ("qabf", "ssim", "vif")
NO_REFERENCE_ORDER = ("sf", "sd", "en")


def compute_aggregate(
    rows: Sequence[dict],
    metrics: Sequence[str],
    competitor_scores: dict | None = None,
) -> dict:
    """Means over rows plus the cross-method rank aggregation.

    ``competitor_scores`` maps method name -> metric -> score; the batch
    means join the table as method "textfuse" and every method gets its
    mean rank over the traditional and the textual-attention columns.
    """
    ref = [m for m in REFERENCE_ORDER if m in metrics]
    plain = [m for m in NO_REFERENCE_ORDER if m in metrics]
    aggregate: dict = {"count": len(rows)}
    if rows:
        aggregate["mean_c_t"] = float(np.mean([r["c_t"] for r in rows]))
        means: dict = {}
        for m in ref:
            means[m] = {
                "q_o": float(np.mean([r["metrics"][m]["q_o"] for r in rows])),
                "q_plus": float(np.mean([r["metrics"][m]["q_plus"] for r in rows])),
            }
        for m in plain:
            means[m] = float(np.mean([r["metrics"][m] for r in rows]))
        aggregate["means"] = means
    else:
        aggregate["mean_c_t"] = None
        aggregate["means"] = {}
    aggregate["mrank"] = None
    aggregate["mrank_plus"] = None
    if rows and competitor_scores and ref:
        own_trad = {m: aggregate["means"][m]["q_o"] for m in ref}
        own_plus = {f"{m}_plus": aggregate["means"][m]["q_plus"] for m in ref}
        methods = sorted(competitor_scores) + ["textfuse"]
        table_scores = {**competitor_scores, "textfuse": {**own_trad, **own_plus}}
        for key, columns in (("mrank", ref), ("mrank_plus", [f"{m}_plus" for m in ref])):
            if all(all(c in table_scores[m] for c in columns) for m in methods):
                table = ScoreTable(
                    methods=tuple(methods),
                    metrics=tuple(columns),
                    scores=np.array([[table_scores[m][c] for c in columns] for m in methods]),
                )
                aggregate[key] = mean_rank(table, columns)
    return aggregate


def run_batch(cfg: BatchConfig) -> dict:
    """Fuse and assess every record; returns the report document."""
    records = load_annotations(cfg.index_path)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    all_rows: list[dict] = []
    all_failures: list[dict] = []
    if cfg.parallelism == 1:
        results = [_run_record(r, cfg) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            results = list(pool.map(lambda r: _run_record(r, cfg), records))
    for rows, failures in results:
        all_rows.extend(rows)
        all_failures.extend(failures)
    all_rows.sort(key=lambda r: (r["pair_id"], r["description"]))
    all_failures.sort(key=lambda r: r["pair_id"])
    competitors = None
    if cfg.competitor_scores is not None:
        competitors = json.loads(Path(cfg.competitor_scores).read_text())["methods"]
    report = {
        "version": REPORT_VERSION,
        "metrics": list(cfg.metrics),
        "rows": all_rows,
        "failures": all_failures,
        "aggregate": compute_aggregate(all_rows, cfg.metrics, competitors),
    }
    report_path = cfg.output_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    (cfg.output_dir / "report.csv").write_text(report_to_csv(report))
    return report


def load_report(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != REPORT_VERSION:
        raise ValueError(f"{path}: unsupported report version {doc.get('version')!r}")
    return doc


def report_to_csv(report: dict) -> str:
    """Fixed column order: pair_id, description, c_t, then per-metric columns.

    Reference metrics contribute ``<m>_qo,<m>_qplus`` pairs in the order
    qabf, ssim, vif; no-reference metrics follow in the order sf, sd, en.
    """
    metrics = report.get("metrics", list(METRIC_NAMES))
    ref = [m for m in REFERENCE_ORDER if m in metrics]
    plain = [m for m in NO_REFERENCE_ORDER if m in metrics]
    header = ["pair_id", "description", "c_t"]
    for m in ref:
        header += [f"{m}_qo", f"{m}_qplus"]
    header += plain
    lines = [",".join(header)]
    for row in report["rows"]:
        cells = [row["pair_id"], '"' + row["description"].replace('"', '""') + '"', repr(row["c_t"])]
        for m in ref:
            cells += [repr(row["metrics"][m]["q_o"]), repr(row["metrics"][m]["q_plus"])]
        for m in plain:
            cells.append(repr(row["metrics"][m]))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"

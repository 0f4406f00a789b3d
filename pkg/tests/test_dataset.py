import json

import numpy as np
import pytest

from textfuse import GrayImage, InstanceMap
from textfuse import imgio
from textfuse.dataset import (
    AnnotationError,
    BatchConfig,
    compute_aggregate,
    concat_descriptions,
    full_description,
    load_annotations,
    load_batch_config,
    load_report,
    report_to_csv,
    run_batch,
)


def make_toy_dataset(root, pairs=3, size=48, with_instances=True, with_heatmaps=False, seed=100):
    """Synthetic aligned pairs: a bright square on the IR side, texture on VIS."""
    from textfuse.association import proxy_heatmaps

    rng = np.random.default_rng(seed)
    (root / "ir").mkdir(parents=True)
    (root / "vis").mkdir()
    (root / "labels").mkdir()
    index = {"version": 1, "pairs": []}
    for i in range(pairs):
        pair_id = f"pair-{i:04d}"
        ir = rng.uniform(0.0, 0.4, (size, size))
        y0, x0 = int(rng.integers(4, size // 2)), int(rng.integers(4, size // 2))
        h, w = int(rng.integers(8, size // 3)), int(rng.integers(8, size // 3))
        ir[y0 : y0 + h, x0 : x0 + w] += 0.5
        vis = rng.uniform(0.2, 0.8, (size, size))
        imgio.save_gray(GrayImage(np.clip(ir, 0, 1)), root / "ir" / f"{i:04d}.png")
        imgio.save_gray(GrayImage(np.clip(vis, 0, 1)), root / "vis" / f"{i:04d}.png")
        record = {
            "id": pair_id,
            "ir": f"ir/{i:04d}.png",
            "vis": f"vis/{i:04d}.png",
            "descriptions": [
                {
                    "annotator_class": "specialist",
                    "sentences": ["A person stands in the scene.", "A car is parked nearby."],
                }
            ],
        }
        inst = None
        if with_instances:
            labels = np.zeros((size, size), dtype=np.int32)
            labels[y0 : y0 + h, x0 : x0 + w] = 1
            labels[2:6, 2:6] = 2
            inst = InstanceMap(labels, {1: "person", 2: "car"})
            imgio.save_instance_map(inst, root / "labels" / f"{i:04d}.png")
            record["instances"] = f"labels/{i:04d}.png"
        if with_heatmaps and inst is not None:
            hm_dir = root / "heatmaps" / f"{i:04d}"
            hm_dir.mkdir(parents=True)
            for m in proxy_heatmaps(sorted(set(inst.classes.values())), inst):
                imgio.save_heatmap(m, hm_dir / f"{m.word}.ir.pfm")
                imgio.save_heatmap(m, hm_dir / f"{m.word}.vis.pfm")
            record["heatmaps"] = f"heatmaps/{i:04d}"
        index["pairs"].append(record)
    (root / "annotations.json").write_text(json.dumps(index, indent=2))
    return root / "annotations.json"


class TestLoadAnnotations:
    def test_well_formed(self, tmp_path):
        index = make_toy_dataset(tmp_path, pairs=2)
        records = load_annotations(index)
        assert [r.pair_id for r in records] == ["pair-0000", "pair-0001"]
        assert records[0].instance_path is not None

    def test_too_many_sentences(self, tmp_path):
        index = make_toy_dataset(tmp_path, pairs=1)
        doc = json.loads(index.read_text())
        doc["pairs"][0]["descriptions"][0]["sentences"] = ["a", "b", "c", "d"]
        index.write_text(json.dumps(doc))
        with pytest.raises(AnnotationError, match=r"pair-0000.*4 sentences"):
            load_annotations(index)

    def test_missing_ir_path(self, tmp_path):
        index = make_toy_dataset(tmp_path, pairs=1)
        doc = json.loads(index.read_text())
        doc["pairs"][0]["ir"] = "ir/nosuch.png"
        index.write_text(json.dumps(doc))
        with pytest.raises(AnnotationError, match="nosuch.png"):
            load_annotations(index)

    def test_bad_annotator_class(self, tmp_path):
        index = make_toy_dataset(tmp_path, pairs=1)
        doc = json.loads(index.read_text())
        doc["pairs"][0]["descriptions"][0]["annotator_class"] = "robot"
        index.write_text(json.dumps(doc))
        with pytest.raises(AnnotationError, match="annotator_class"):
            load_annotations(index)

    def test_version_required(self, tmp_path):
        p = tmp_path / "idx.json"
        p.write_text(json.dumps({"pairs": []}))
        with pytest.raises(AnnotationError, match="version"):
            load_annotations(p)

    def test_duplicate_id(self, tmp_path):
        index = make_toy_dataset(tmp_path, pairs=2)
        doc = json.loads(index.read_text())
        doc["pairs"][1]["id"] = doc["pairs"][0]["id"]
        index.write_text(json.dumps(doc))
        with pytest.raises(AnnotationError, match="duplicate"):
            load_annotations(index)


class TestConcatDescriptions:
    def _record(self, tmp_path, sentences):
        index = make_toy_dataset(tmp_path, pairs=1)
        doc = json.loads(index.read_text())
        doc["pairs"][0]["descriptions"][0]["sentences"] = sentences
        index.write_text(json.dumps(doc))
        return load_annotations(index)[0]

    def test_choose_two_of_three(self, tmp_path):
        rec = self._record(tmp_path, ["s1.", "s2.", "s3."])
        assert concat_descriptions(rec, 2) == ["s1. s2.", "s1. s3.", "s2. s3."]

    def test_full_size_is_single(self, tmp_path):
        rec = self._record(tmp_path, ["s1.", "s2.", "s3."])
        assert concat_descriptions(rec, 3) == ["s1. s2. s3."]

    def test_k_one_is_sentences(self, tmp_path):
        rec = self._record(tmp_path, ["s1.", "s2."])
        assert concat_descriptions(rec, 1) == ["s1.", "s2."]

    def test_out_of_range(self, tmp_path):
        rec = self._record(tmp_path, ["s1.", "s2."])
        with pytest.raises(ValueError, match="out of range"):
            concat_descriptions(rec, 3)

    def test_full_description_joins_everything(self, tmp_path):
        rec = self._record(tmp_path, ["s1.", "s2."])
        assert full_description(rec) == "s1. s2."


class TestBatchConfig:
    def test_toml_roundtrip(self, tmp_path):
        index = make_toy_dataset(tmp_path, pairs=1)
        cfg_path = tmp_path / "run.toml"
        cfg_path.write_text(
            "\n".join(
                [
                    "[dataset]",
                    'index = "annotations.json"',
                    "[output]",
                    'directory = "out"',
                    "[association]",
                    "alpha = 0.4",
                    'lexicon = ["person"]',
                    "[assessment]",
                    'metrics = ["ssim", "sf"]',
                    "[run]",
                    "parallelism = 2",
                ]
            )
        )
        cfg = load_batch_config(cfg_path)
        assert cfg.index_path == index
        assert cfg.output_dir == tmp_path / "out"
        assert cfg.alpha == 0.4
        assert cfg.lexicon == ("person",)
        assert cfg.metrics == ("ssim", "sf")
        assert cfg.parallelism == 2

    def test_missing_index_rejected(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text('[output]\ndirectory = "out"\n')
        with pytest.raises(ValueError, match="index"):
            load_batch_config(p)


class TestRunBatch:
    def _config(self, tmp_path, **kw):
        index = make_toy_dataset(tmp_path, pairs=3)
        return BatchConfig(index_path=index, output_dir=tmp_path / "out", **kw)

    def test_toy_batch_structure(self, tmp_path):
        cfg = self._config(tmp_path)
        report = run_batch(cfg)
        assert len(report["rows"]) == 3
        assert report["failures"] == []
        assert report["aggregate"]["count"] == 3
        for row in report["rows"]:
            fused = cfg.output_dir / row["fused"]
            assert fused.exists()
            assert 0.0 <= row["c_t"] <= 1.0
            assert set(row["metrics"]) == {"qabf", "ssim", "vif", "sf", "sd", "en"}

    def test_parallelism_is_byte_identical(self, tmp_path):
        index = make_toy_dataset(tmp_path, pairs=4)
        out1 = BatchConfig(index_path=index, output_dir=tmp_path / "o1", parallelism=1)
        out4 = BatchConfig(index_path=index, output_dir=tmp_path / "o4", parallelism=4)
        run_batch(out1)
        run_batch(out4)
        assert (tmp_path / "o1" / "report.json").read_bytes() == (
            tmp_path / "o4" / "report.json"
        ).read_bytes()
        assert (tmp_path / "o1" / "report.csv").read_bytes() == (
            tmp_path / "o4" / "report.csv"
        ).read_bytes()

    def test_empty_dataset(self, tmp_path):
        p = tmp_path / "idx.json"
        p.write_text(json.dumps({"version": 1, "pairs": []}))
        report = run_batch(BatchConfig(index_path=p, output_dir=tmp_path / "out"))
        assert report["rows"] == []
        assert report["failures"] == []

    def test_failure_isolation(self, tmp_path):
        index = make_toy_dataset(tmp_path, pairs=2)
        # corrupt the second pair's IR image
        (tmp_path / "ir" / "0001.png").write_bytes(b"\x89PNG broken")
        report = run_batch(BatchConfig(index_path=index, output_dir=tmp_path / "out"))
        assert len(report["rows"]) == 1
        assert len(report["failures"]) == 1
        assert report["failures"][0]["pair_id"] == "pair-0001"

    def test_reload_then_aggregate_matches(self, tmp_path):
        cfg = self._config(tmp_path)
        report = run_batch(cfg)
        back = load_report(cfg.output_dir / "report.json")
        again = compute_aggregate(back["rows"], back["metrics"])
        assert again == report["aggregate"]

    def test_desc_subset_expands_rows(self, tmp_path):
        cfg = self._config(tmp_path, desc_subset=1)
        report = run_batch(cfg)
        # two sentences per record -> two rows per pair
        assert len(report["rows"]) == 6
        names = {row["fused"] for row in report["rows"]}
        assert len(names) == 6

    def test_competitor_mrank(self, tmp_path):
        comp = tmp_path / "competitors.json"
        comp.write_text(
            json.dumps(
                {
                    "methods": {
                        "other": {
                            "qabf": 0.1,
                            "ssim": 0.1,
                            "vif": 0.1,
                            "qabf_plus": 0.1,
                            "ssim_plus": 0.1,
                            "vif_plus": 0.1,
                        }
                    }
                }
            )
        )
        cfg = self._config(tmp_path, competitor_scores=comp)
        report = run_batch(cfg)
        mrank = report["aggregate"]["mrank"]
        assert set(mrank) == {"other", "textfuse"}
        assert mrank["textfuse"] == 1.0
        assert report["aggregate"]["mrank_plus"]["textfuse"] == 1.0

    def test_csv_column_order(self, tmp_path):
        cfg = self._config(tmp_path)
        report = run_batch(cfg)
        csv_text = report_to_csv(report)
        header = csv_text.splitlines()[0]
        assert header == (
            "pair_id,description,c_t,qabf_qo,qabf_qplus,ssim_qo,ssim_qplus,"
            "vif_qo,vif_qplus,sf,sd,en"
        )
        assert len(csv_text.splitlines()) == 4

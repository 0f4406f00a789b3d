"""Command-line interface: associate, fuse, assess, batch, serve."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import imgio
from .assessment import METRIC_NAMES, evaluate_metrics
from .association import (
    AssociationConfig,
    aggregate_heatmaps,
    binarize_interest,
    combine_modalities,
    extract_nouns,
)
from .dataset import load_batch_config, run_batch
from .imagery import InterestMask, merge_ycbcr, split_ycbcr, to_luminance, upscale_nearest
from .pipeline import run_association, run_fusion


def _load_pair(ir_path, vis_path):
    ir = imgio.load_gray(ir_path)
    try:
        vis = imgio.load_gray(vis_path)
        vis_color = None
    except imgio.ImageFormatError:
        vis_color = imgio.load_color(vis_path)
        vis = to_luminance(vis_color)
    if ir.shape != vis.shape:
        raise click.ClickException(f"pair extents differ: {ir.shape} vs {vis.shape}")
    return ir, vis, vis_color


def _load_optional_inputs(instances, heatmaps):
    inst = imgio.load_instance_map(instances) if instances else None
    maps = imgio.load_heatmap_dir(heatmaps) or None if heatmaps else None
    return inst, maps


def _assoc_config(alpha, bin_threshold, lexicon):
    words = frozenset(w.strip() for w in lexicon.split(",") if w.strip()) if lexicon else frozenset()
    return AssociationConfig(tau_b=bin_threshold, alpha=alpha, lexicon=words)


def _load_feature_bank(spec_value):
    """``default`` or ``file:DIR`` with ir.raw/vis.raw stacks inside."""
    if spec_value == "default":
        return None, None
    if not spec_value.startswith("file:"):
        raise click.ClickException(f"--feature-bank must be 'default' or 'file:DIR', got {spec_value!r}")
    directory = Path(spec_value[5:])
    fs_ir = imgio.load_feature_stack(directory / "ir.raw")
    fs_vis = imgio.load_feature_stack(directory / "vis.raw")
    return fs_ir, fs_vis


@click.group()
@click.version_option(package_name="textfuse")
def main():
    """Text-controllable infrared-visible image fusion toolkit."""


@main.command()
@click.option("--ir", "ir_path", required=True, type=click.Path(exists=True))
@click.option("--vis", "vis_path", required=True, type=click.Path(exists=True))
@click.option("--text", default="", help="Textual description of the fusion focus.")
@click.option("--heatmaps", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--instances", type=click.Path(exists=True), default=None)
@click.option("--alpha", default=0.5, show_default=True)
@click.option("--bin-threshold", default=0.35, show_default=True)
@click.option("--lexicon", default="", help="Comma-separated nouns; defaults to instance classes.")
@click.option("--out-mask", required=True, type=click.Path())
def associate(ir_path, vis_path, text, heatmaps, instances, alpha, bin_threshold, lexicon, out_mask):
    """Run coarse-to-fine association and export the final interest map."""
    ir, vis, _ = _load_pair(ir_path, vis_path)
    inst, maps = _load_optional_inputs(instances, heatmaps)
    cfg = _assoc_config(alpha, bin_threshold, lexicon)
    res = run_association(text, inst, ir.shape, cfg=cfg, heatmaps=maps)
    imgio.save_mask(res.b_f, out_mask)
    click.echo(f"interest map: {res.b_f.support} pixels -> {out_mask}")


@main.command()
@click.option("--ir", "ir_path", required=True, type=click.Path(exists=True))
@click.option("--vis", "vis_path", required=True, type=click.Path(exists=True))
@click.option("--text", default="")
@click.option("--heatmaps", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--instances", type=click.Path(exists=True), default=None)
@click.option("--alpha", default=0.5, show_default=True)
@click.option("--bin-threshold", default=0.35, show_default=True)
@click.option("--lexicon", default="")
@click.option("--softmax-c", default=1.0, show_default=True)
@click.option("--feature-bank", default="default", show_default=True,
              help="'default' or 'file:DIR' with ir.raw/vis.raw stacks.")
@click.option("--linear-weights", is_flag=True,
              help="Weight-outside-norm fusion rule instead of squared weights.")
@click.option("--color", is_flag=True, help="Reattach visible chroma on export.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--dump-weights", type=click.Path(file_okay=False), default=None)
@click.option("--dump-mask", type=click.Path(), default=None)
def fuse(ir_path, vis_path, text, heatmaps, instances, alpha, bin_threshold, lexicon,
         softmax_c, feature_bank, linear_weights, color, out_path, dump_weights, dump_mask):
    """Fuse a pair under a textual description via the closed-form rule."""
    ir, vis, vis_color = _load_pair(ir_path, vis_path)
    inst, maps = _load_optional_inputs(instances, heatmaps)
    cfg = _assoc_config(alpha, bin_threshold, lexicon)
    fs_ir, fs_vis = _load_feature_bank(feature_bank)
    out = run_fusion(
        ir, vis, text=text, instances=inst, cfg=cfg, heatmaps=maps,
        squared_weights=not linear_weights, softmax_c=softmax_c,
        features_ir=fs_ir, features_vis=fs_vis,
    )
    if color and vis_color is not None:
        _, cb, cr = split_ycbcr(vis_color)
        imgio.save_color(merge_ycbcr(out.fused.data, cb, cr), out_path)
    else:
        imgio.save_gray(out.fused, out_path)
    if dump_mask:
        imgio.save_mask(out.association.b_f, dump_mask)
    if dump_weights:
        d = Path(dump_weights)
        d.mkdir(parents=True, exist_ok=True)
        imgio.save_raw_grid(out.weights.w_ir, d / "w_ir.raw")
        imgio.save_raw_grid(out.weights.w_vis, d / "w_vis.raw")
        (d / "scalars.json").write_text(
            json.dumps({"p_ir": out.weights.p_ir, "p_vis": out.weights.p_vis}, indent=2)
        )
    click.echo(f"fused -> {out_path}")


@main.command()
@click.option("--fused", "fused_path", required=True, type=click.Path(exists=True))
@click.option("--ir", "ir_path", required=True, type=click.Path(exists=True))
@click.option("--vis", "vis_path", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_path", type=click.Path(exists=True), default=None,
              help="Final interest map B_f; defaults to empty (C_t = 0).")
@click.option("--heatmaps", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--text", default="", help="Used to select heat maps when a directory is given.")
@click.option("--bin-threshold", default=0.35, show_default=True)
@click.option("--lexicon", default="")
@click.option("--metrics", default=",".join(METRIC_NAMES), show_default=True)
@click.option("--strict-support", is_flag=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def assess(fused_path, ir_path, vis_path, mask_path, heatmaps, text, bin_threshold,
           lexicon, metrics, strict_support, out_path):
    """Evaluate a fused image; writes a JSON report or prints it."""
    ir, vis, _ = _load_pair(ir_path, vis_path)
    fused = imgio.load_gray(fused_path)
    if mask_path:
        b_f = imgio.load_mask(mask_path)
    else:
        b_f = InterestMask.zeros(*ir.shape)
    metric_list = tuple(m.strip() for m in metrics.split(",") if m.strip())
    m_hat_ir = m_hat_vis = b_hat = None
    if heatmaps:
        found = imgio.load_heatmap_dir(heatmaps)
        words = list(found)
        if text:
            lex = set(found) | {w.strip() for w in lexicon.split(",") if w.strip()}
            words = extract_nouns(text, lex) if lex else []

        def _side(modality):
            side = [found[w][modality] for w in words if modality in found.get(w, {})]
            side = [
                m if m.shape == ir.shape
                else upscale_nearest(m, width=ir.shape[1], height=ir.shape[0])
                for m in side
            ]
            return aggregate_heatmaps(side, extent=ir.shape)

        m_hat_ir = _side("ir")
        m_hat_vis = _side("vis")
        b_hat = combine_modalities(
            binarize_interest(m_hat_ir, bin_threshold), binarize_interest(m_hat_vis, bin_threshold)
        )
    results, plain, c_t = evaluate_metrics(
        fused, ir, vis, b_f,
        m_hat_ir=m_hat_ir, m_hat_vis=m_hat_vis, b_hat=b_hat,
        metrics=metric_list, strict_support=strict_support,
    )
    report = {
        "c_t": c_t,
        "reference": [
            {"metric": r.name, "q_o": r.q_o, "q_plus": r.q_plus, "c_t": r.c_t, "w_o": r.w_o}
            for r in results
        ],
        "no_reference": plain,
    }
    text_out = json.dumps(report, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text_out)
        click.echo(f"report -> {out_path}")
    else:
        click.echo(text_out)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def batch(config_path):
    """Run a full dataset evaluation from a TOML config."""
    cfg = load_batch_config(config_path)
    report = run_batch(cfg)
    ok = len(report["rows"])
    failed = len(report["failures"])
    click.echo(f"batch: {ok} rows, {failed} failures -> {cfg.output_dir / 'report.json'}")
    if failed:
        for f in report["failures"]:
            click.echo(f"  FAILED {f['pair_id']}: {f['error']}", err=True)
        sys.exit(1)


@main.command()
@click.option("--dataset-root", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--bind", default="127.0.0.1:8080", show_default=True)
@click.option("--workers", default=1, show_default=True)
def serve(dataset_root, bind, workers):
    """Serve the HTTP API (and the explorer UI when built)."""
    import uvicorn

    host, _, port = bind.partition(":")
    if dataset_root:
        os.environ["TEXTFUSE_DATASET_ROOT"] = str(Path(dataset_root).resolve())
    uvicorn.run(
        "textfuse.service:app_factory",
        factory=True,
        host=host or "127.0.0.1",
        port=int(port or 8080),
        workers=workers,
    )


if __name__ == "__main__":
    main()

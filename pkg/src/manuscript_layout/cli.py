"""Command-line entry points: synth, train, infer, evaluate, serve."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click

from . import evaluation, synth, training
from .corpus import parse_annotation_file, parse_manifest_file, write_annotation_file

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@click.group()
def main() -> None:
    """Instance-level layout parsing toolkit for historical manuscripts."""


@main.command("synth")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--n", "n_docs", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--fractions", default="0.6,0.2,0.2", show_default=True)
def synth_cmd(config_path, n_docs, seed, out_dir, fractions):
    """Generate a synthetic corpus with ground-truth annotations."""
    cfg_kwargs = {}
    if config_path:
        cfg_kwargs = json.loads(Path(config_path).read_text(encoding="utf-8"))
        for key in ("lines_per_page", "line_spacing", "hole_count", "hole_radius", "degradation_count"):
            if key in cfg_kwargs:
                cfg_kwargs[key] = tuple(cfg_kwargs[key])
    cfg = synth.SynthConfig(**cfg_kwargs)
    fracs = tuple(float(f) for f in fractions.split(","))
    docs, _ = synth.generate_corpus(cfg, n_docs, fracs, seed, out_dir)
    click.echo(f"wrote {len(docs)} documents to {out_dir}")


@main.command("train")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--stages", "stages_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--backbone-weights", type=click.Path(exists=True), default=None)
def train_cmd(corpus_path, manifest_path, stages_path, seed, out_dir, backbone_weights):
    """Run the staged training schedule and write a checkpoint + loss log."""
    docs = parse_annotation_file(corpus_path)
    manifest = parse_manifest_file(manifest_path)
    if stages_path:
        stages, opt_cfg = training.load_training_config(stages_path)
    else:
        stages, opt_cfg = training.DEFAULT_STAGES, training.OptimizerConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, loss_log = training.run_training(
        docs,
        manifest,
        stages=stages,
        opt_cfg=opt_cfg,
        seed=seed,
        image_root=Path(corpus_path).parent,
        backbone_weights=backbone_weights,
        checkpoint_path=out / "model.ckpt",
    )
    training.write_loss_log(loss_log, out / "loss_log.jsonl")
    click.echo(f"checkpoint and loss log written to {out}")


@main.command("infer")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def infer_cmd(ckpt_path, image_path, out_path):
    """Predict layouts for an image or directory; output is a corpus file."""
    import numpy as np
    from PIL import Image

    from .inference import layout_to_document, run_inference
    from .model import load_checkpoint

    model = load_checkpoint(ckpt_path)
    source = Path(image_path)
    paths = sorted(source.glob("*.png")) + sorted(source.glob("*.jpg")) if source.is_dir() else [source]
    docs = []
    for path in paths:
        with Image.open(path) as img:
            array = np.asarray(img.convert("RGB"))
        layout = run_inference(array, model)
        docs.append(layout_to_document(layout, doc_id=path.stem, image_path=str(path)))
        click.echo(f"{path.name}: {len(layout.instances)} instances")
    write_annotation_file(docs, out_path)


@main.command("evaluate")
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--gt", "gt_path", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--split", default="test", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def evaluate_cmd(pred_path, gt_path, manifest_path, split, out_path):
    """Score predictions against ground truth and render the report tables."""
    report = evaluation.emit_report(pred_path, gt_path, manifest_path, split=split)
    click.echo(evaluation.render_report(report))
    if out_path:
        evaluation.write_report(report, out_path)


@main.command("serve")
@click.option("--corpus-dir", type=click.Path(exists=True), required=True)
@click.option("--store", "store_path", type=click.Path(), required=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(corpus_dir, store_path, port):
    """Serve the annotation backend over HTTP."""
    import uvicorn

    from .service import AnnotationStore, create_app, load_corpus_dir

    store = AnnotationStore(Path(store_path))
    load_corpus_dir(store, Path(corpus_dir))
    app = create_app(store, image_dir=Path(corpus_dir))
    uvicorn.run(app, host="0.0.0.0", port=port)


if __name__ == "__main__":
    main()

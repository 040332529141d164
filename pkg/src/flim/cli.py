"""Command-line entry points for every pipeline stage.

Each command reads and writes plain files so stages compose in shell scripts;
failures exit nonzero with a machine-readable error JSON on stderr.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click

from . import pipeline
from .classifiers import TrainConfig, format_metrics_table
from .errors import FlimError
from .image_io import load_dataset
from .network import NetworkSpec, load_network, save_network
from .pipeline import ValidationError
from .synthetic import (BLOBS_CLASS, STRIPES_CLASS, generate_texture_dataset,
                        write_example_markers)


def fail_json(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (FlimError, FileNotFoundError, json.JSONDecodeError) as e:
            doc = {"v": 1, "error": type(e).__name__, "message": str(e)}
            print(json.dumps(doc, sort_keys=True), file=sys.stderr)
            sys.exit(1)
    return wrapper


@click.group()
def main():
    """Marker-driven filter learning, feature extraction, and classification."""


@main.command()
@click.option("--dataset", "dataset_root", required=True, type=click.Path())
@click.option("--train", "n_train", required=True, type=int)
@click.option("--val", "n_val", required=True, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--force-train-markers", "markers_dir", default=None, type=click.Path(),
              help="Marker directory whose image ids are forced into the train split.")
@click.option("--out", "out_path", required=True, type=click.Path())
@fail_json
def split(dataset_root, n_train, n_val, seed, markers_dir, out_path):
    """Write a seeded disjoint train/val/test split manifest."""
    index = load_dataset(dataset_root)
    force = ()
    if markers_dir:
        force = sorted(pipeline.load_marker_dir(markers_dir))
    doc = pipeline.make_splits(index, n_train, n_val, seed, force_train=force)
    pipeline.dump_json(doc, out_path)
    click.echo(f"split sizes: train={len(doc['train'])} val={len(doc['val'])} "
               f"test={len(doc['test'])} -> {out_path}")


@main.command()
@click.option("--dataset", "dataset_root", required=True, type=click.Path())
@click.option("--splits", "splits_path", required=True, type=click.Path())
@click.option("--split", "split_name", default="train")
@click.option("--perplexity", default=30.0, type=float)
@click.option("--iterations", default=1000, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@fail_json
def project(dataset_root, splits_path, split_name, perplexity, iterations, seed, out_path):
    """t-SNE projection of a split's images as [{id, x, y, label}] JSON."""
    index = load_dataset(dataset_root)
    splits = pipeline.load_splits(splits_path)
    emb, labels = pipeline.project_images(index, splits[split_name],
                                          perplexity=perplexity,
                                          iterations=iterations, seed=seed)
    doc = {"v": 1, "space": "input", "split": split_name,
           "points": emb.to_json(labels),
           "final_kl": emb.kl_history[-1]}
    pipeline.dump_json(doc, out_path)
    click.echo(f"embedded {len(emb.ids)} images -> {out_path} "
               f"(final KL {emb.kl_history[-1]:.4f})")


@main.command()
@click.option("--dataset", "dataset_root", required=True, type=click.Path())
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--markers", "markers_dir", required=True, type=click.Path())
@click.option("--splits", "splits_path", default=None, type=click.Path(),
              help="Split manifest; markers must lie inside its train split, "
                   "which also fits the trailing batch norms.")
@click.option("--seed", default=0, type=int)
@click.option("--layer", "layer_n", default=None, type=int,
              help="Print the serialized bank paths of one layer.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@fail_json
def learn(dataset_root, config_path, markers_dir, splits_path, seed, layer_n, out_dir):
    """Learn filter banks from markers and write the model directory."""
    index = load_dataset(dataset_root)
    spec = NetworkSpec.from_json(pipeline.read_json(config_path))
    markers = pipeline.load_marker_dir(markers_dir)
    train_ids = None
    norm_ids = sorted(markers)
    if splits_path:
        splits = pipeline.load_splits(splits_path)
        train_ids = splits["train"]
        norm_ids = train_ids
    model = pipeline.learn_from_markers(index, markers, spec, seed=seed,
                                        train_ids=train_ids, norm_ids=norm_ids)
    save_network(model, out_dir)
    if layer_n is not None:
        if not (1 <= layer_n <= len(model.layers)):
            raise ValidationError(f"layer {layer_n} out of range 1..{len(model.layers)}")
        click.echo(os.path.join(out_dir, f"layer{layer_n}.fb"))
        click.echo(os.path.join(out_dir, f"layer{layer_n}.fb.json"))
    total = sum(l.bank.num_filters for l in model.layers)
    click.echo(f"learned {len(model.layers)} layer(s), {total} filters -> {out_dir}")


@main.command()
@click.option("--dataset", "dataset_root", required=True, type=click.Path())
@click.option("--model", "model_dir", required=True, type=click.Path())
@click.option("--splits", "splits_path", required=True, type=click.Path())
@click.option("--split", "split_name", default="train")
@click.option("--out", "out_dir", required=True, type=click.Path())
@fail_json
def extract(dataset_root, model_dir, splits_path, split_name, out_dir):
    """Extract feature vectors for one split (binary matrix + manifest)."""
    index = load_dataset(dataset_root)
    model = load_network(model_dir)
    splits = pipeline.load_splits(splits_path)
    ids, X, labels = pipeline.extract_split(model, index, splits[split_name])
    pipeline.save_features(out_dir, ids, X, labels)
    click.echo(f"extracted {X.shape[0]} x {X.shape[1]} features -> {out_dir}")


@main.command("train-clf")
@click.option("--kind", type=click.Choice(["svm", "mlp"]), required=True)
@click.option("--feats", "feats_dir", required=True, type=click.Path())
@click.option("--positive-class", default=1, type=int)
@click.option("--c", "c_value", default=0.01, type=float, help="SVM regularization C.")
@click.option("--hidden", multiple=True, type=int, help="MLP hidden layer sizes.")
@click.option("--epochs", default=40, type=int)
@click.option("--batch-size", default=64, type=int)
@click.option("--lr", default=1e-4, type=float)
@click.option("--weight-decay", default=1e-3, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@fail_json
def train_clf(kind, feats_dir, positive_class, c_value, hidden, epochs,
              batch_size, lr, weight_decay, seed, out_dir):
    """Train a classifier on extracted features."""
    _, X, labels = pipeline.load_features(feats_dir)
    config = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=lr,
                         weight_decay=weight_decay, seed=seed)
    hidden_sizes = tuple(hidden) if hidden else None
    model = pipeline.train_classifier(kind, X, labels, positive_class,
                                      C=c_value, seed=seed,
                                      hidden_sizes=hidden_sizes, train_config=config)
    pipeline.save_classifier(model, kind, positive_class, out_dir)
    click.echo(f"trained {kind} on {X.shape[0]} examples -> {out_dir}")


@main.command("eval")
@click.option("--clf", "clf_dir", required=True, type=click.Path())
@click.option("--feats", "feats_dir", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@fail_json
def eval_cmd(clf_dir, feats_dir, out_path):
    """Evaluate a classifier on extracted features; writes metrics JSON."""
    model, meta = pipeline.load_classifier(clf_dir)
    _, X, labels = pipeline.load_features(feats_dir)
    metrics = pipeline.evaluate_classifier(model, meta, X, labels)
    pipeline.dump_json(metrics.to_json(), out_path)
    table = format_metrics_table([
        (meta["kind"], (metrics.precision, 0.0), (metrics.recall, 0.0),
         (metrics.f_score, 0.0))])
    click.echo(table)


@main.command("run-all")
@click.option("--dataset", "dataset_root", required=True, type=click.Path())
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--markers", "markers_dir", required=True, type=click.Path())
@click.option("--splits", "n_splits", default=3, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--kind", type=click.Choice(["svm", "mlp"]), default="svm")
@click.option("--c", "c_value", default=0.01, type=float)
@click.option("--train-size", default=None, type=int)
@click.option("--val-size", default=None, type=int)
@click.option("--positive-class", default=1, type=int)
@click.option("--eval-split", default="test", type=click.Choice(["val", "test"]))
@click.option("--out", "out_dir", required=True, type=click.Path())
@fail_json
def run_all(dataset_root, config_path, markers_dir, n_splits, seed, kind,
            c_value, train_size, val_size, positive_class, eval_split, out_dir):
    """Repeat the full pipeline over seeded splits; report mean +- std."""
    summary = pipeline.run_all(dataset_root, config_path, markers_dir, out_dir,
                               n_splits=n_splits, seed=seed, kind=kind,
                               C=c_value, train_size=train_size,
                               val_size=val_size, positive_class=positive_class,
                               eval_split=eval_split)
    row = (kind, (summary["mean"]["precision"], summary["std"]["precision"]),
           (summary["mean"]["recall"], summary["std"]["recall"]),
           (summary["mean"]["f_score"], summary["std"]["f_score"]))
    click.echo(format_metrics_table([row]))


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--tiles-per-class", default=100, type=int)
@click.option("--size", default=64, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--markers-out", default=None, type=click.Path(),
              help="Also write example markers for the first N images per class.")
@click.option("--marked-per-class", default=2, type=int)
@fail_json
def datagen(out_dir, tiles_per_class, size, seed, markers_out, marked_per_class):
    """Generate the synthetic stripes-vs-blobs texture dataset."""
    generate_texture_dataset(out_dir, tiles_per_class=tiles_per_class,
                             size=size, seed=seed)
    click.echo(f"wrote {2 * tiles_per_class} tiles under {out_dir}")
    if markers_out:
        index = load_dataset(out_dir)
        by_class: dict[int, list[str]] = {STRIPES_CLASS: [], BLOBS_CLASS: []}
        for image_id, _, label in index.entries:
            if len(by_class[label]) < marked_per_class:
                by_class[label].append(image_id)
        write_example_markers(markers_out, by_class, size=size)
        click.echo(f"wrote example markers -> {markers_out}")


@main.command()
@click.option("--project", "project_dir", required=True, type=click.Path())
@click.option("--dataset", "dataset_root", default=None, type=click.Path())
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=None, type=int,
              help="Defaults to FLIM_PORT or 8000.")
@click.option("--train", "n_train", default=None, type=int)
@click.option("--val", "n_val", default=None, type=int)
@click.option("--seed", default=0, type=int)
@fail_json
def serve(project_dir, dataset_root, host, port, n_train, n_val, seed):
    """Serve the HTTP API and the browser UI for a project."""
    import uvicorn
    from .service import create_app

    if port is None:
        port = int(os.environ.get("FLIM_PORT", "8000"))
    app = create_app(project_dir, dataset_root=dataset_root,
                     train=n_train, val=n_val, seed=seed)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()

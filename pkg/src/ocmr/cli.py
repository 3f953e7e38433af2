"""Command-line entry point wiring all pipeline stages.

Commands: ingest, synth, build-index, train-retriever, retrieve,
train-reader, evaluate, report. Every command takes ``--config`` (YAML,
see config.py) plus overrides; artifacts land under the run directory
together with a config snapshot and section hashes, so a run is
re-runnable from its own directory. No command mutates its inputs.

Path-only environment overrides: OCMR_KB, OCMR_TRAIN, OCMR_DEV, OCMR_TEST,
OCMR_RUN_DIR.
"""

from __future__ import annotations

import dataclasses
import json
import os
import pickle
import sys
from pathlib import Path

import click
import torch

from . import config as config_mod
from .config import PipelineConfig, apply_ablation, config_hash, load_config, snapshot
from .corpus import (
    DatasetSplit,
    KnowledgeBase,
    load_knowledge_base,
    load_split,
    save_knowledge_base,
    save_split,
)
from .dual_encoder import DualEncoder, dense_retrieve_split, train_dual_encoder
from .entailment import label_split, load_labels, save_labels
from .errors import OcmrError, StaleCacheError
from .evaluation import entailment_probe_accuracy, evaluate_split
from .retrieval import (
    build_tfidf_index,
    evaluate_retrieval,
    load_retrieval_cache,
    retrieve_split,
    save_retrieval_cache,
)
from .segmentation import segment_kb
from .synthetic import SyntheticSpec, generate
from .training import init_reader, load_checkpoint, train
from .vocab import build_vocab, vocab_texts

_ENV_PATHS = {
    "OCMR_KB": ("corpus", "kb"),
    "OCMR_TRAIN": ("corpus", "train"),
    "OCMR_DEV": ("corpus", "dev"),
    "OCMR_TEST": ("corpus", "test"),
}


def _config_from(path, seed=None, out=None, mode=None, ablate=None) -> PipelineConfig:
    config = load_config(path, overrides={"seed": seed, "mode": mode})
    for env, (section, key) in _ENV_PATHS.items():
        value = os.environ.get(env)
        if value:
            setattr(getattr(config, section), key, value)
    run_dir = out or os.environ.get("OCMR_RUN_DIR")
    if run_dir:
        config.run_dir = str(run_dir)
    return apply_ablation(config, ablate)


def _load_corpus(config: PipelineConfig):
    if not config.corpus.kb:
        raise click.UsageError("corpus.kb path is not configured")
    kb = load_knowledge_base(config.corpus.kb)
    kb = segment_kb(kb, config.segmenter)
    splits = {}
    for name in ("train", "dev", "test"):
        path = getattr(config.corpus, name)
        if path:
            splits[name] = load_split(path, kb, name=name)
    return kb, splits


def _retrieval_cache_hash(config: PipelineConfig) -> str:
    return config_hash(
        {"retriever": dataclasses.asdict(config.retriever), "kb": config.corpus.kb}
    )


def _retrieval_for(
    config: PipelineConfig,
    kb: KnowledgeBase,
    split: DatasetSplit,
    run_dir: Path,
    retriever_model: DualEncoder | None = None,
):
    """Load the retrieval cache for a split, building it if absent."""
    cache_path = run_dir / f"retrieval_{split.name}.jsonl"
    cache_hash = _retrieval_cache_hash(config)
    if cache_path.exists():
        return load_retrieval_cache(cache_path, expected_hash=cache_hash)
    if config.retriever.type == "dense":
        model = retriever_model or _load_retriever(run_dir)
        results = dense_retrieve_split(model, kb, split, k=config.retriever.top_k)
    else:
        index = build_tfidf_index(kb)
        results = retrieve_split(index, split, k=config.retriever.top_k)
    save_retrieval_cache(results, cache_path, cache_hash)
    return results


def _load_retriever(run_dir: Path) -> DualEncoder:
    path = run_dir / "retriever.pt"
    if not path.exists():
        raise click.UsageError(
            f"dense retriever checkpoint not found at {path}; run train-retriever first"
        )
    payload = torch.load(path, map_location="cpu", weights_only=False)
    from .dual_encoder import DualEncoderConfig

    model = DualEncoder(payload["vocab"], DualEncoderConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


@click.group()
def main():
    """Open-retrieval conversational machine reading pipeline."""


@main.command()
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True))
@click.option("--train", "train_path", required=True, type=click.Path(exists=True))
@click.option("--dev", "dev_path", required=True, type=click.Path(exists=True))
@click.option("--test", "test_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def ingest(kb_path, train_path, dev_path, test_path, out):
    """Validate corpus files and write normalized copies."""
    out = Path(out)
    kb = load_knowledge_base(kb_path)
    save_knowledge_base(kb, out / "kb.jsonl")
    counts = {"kb": len(kb)}
    for name, path in (("train", train_path), ("dev", dev_path), ("test", test_path)):
        split = load_split(path, kb, name=name)
        save_split(split, out / f"{name}.jsonl")
        counts[name] = len(split)
    click.echo(json.dumps(counts, sort_keys=True))


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True), default=None,
              help="YAML file of synthetic-benchmark settings; defaults otherwise.")
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
def synth(spec_path, out, seed):
    """Generate the synthetic benchmark into --out."""
    import yaml

    data = {}
    if spec_path:
        data = yaml.safe_load(Path(spec_path).read_text(encoding="utf-8")) or {}
    spec = config_mod.build_section(SyntheticSpec, data, path="synthetic")
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    world = generate(spec)
    out = Path(out)
    save_knowledge_base(world.kb, out / "kb.jsonl")
    for split in world.splits():
        save_split(split, out / f"{split.name}.jsonl")
    save_labels(world.true_labels, out / "true_labels.jsonl", config_hash(spec))
    (out / "synthetic_spec.json").write_text(
        json.dumps(dataclasses.asdict(spec), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    click.echo(
        json.dumps(
            {"rules": len(world.kb), "train": len(world.train),
             "dev": len(world.dev), "test": len(world.test)},
            sort_keys=True,
        )
    )


@main.command("build-index")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True))
@click.option("--type", "index_type", type=click.Choice(["tfidf", "dense"]), default="tfidf")
@click.option("--out", required=True, type=click.Path())
@click.option("--retriever-checkpoint", type=click.Path(exists=True), default=None,
              help="Trained dual-encoder checkpoint (required for --type dense).")
def build_index(kb_path, index_type, out, retriever_checkpoint):
    """Build a retrieval index over the knowledge base."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    kb = load_knowledge_base(kb_path)
    meta = {"type": index_type, "kb": str(kb_path), "documents": len(kb)}
    if index_type == "tfidf":
        index = build_tfidf_index(kb)
        with (out / "tfidf_index.pkl").open("wb") as fh:
            pickle.dump(index, fh)
    else:
        if not retriever_checkpoint:
            raise click.UsageError("--type dense requires --retriever-checkpoint")
        payload = torch.load(retriever_checkpoint, map_location="cpu", weights_only=False)
        from .dual_encoder import DualEncoderConfig, doc_text

        model = DualEncoder(payload["vocab"], DualEncoderConfig(**payload["config"]))
        model.load_state_dict(payload["state_dict"])
        model.eval()
        doc_ids = sorted(kb.documents)
        with torch.no_grad():
            matrix = model.encode_documents([doc_text(kb, d) for d in doc_ids])
        torch.save({"doc_ids": doc_ids, "matrix": matrix}, out / "dense_index.pt")
    (out / "index_meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(json.dumps(meta, sort_keys=True))


@main.command("train-retriever")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def train_retriever(config_path, seed, out):
    """Train the dense dual-encoder retriever and write retrieval caches."""
    config = _config_from(config_path, seed=seed, out=out)
    run_dir = Path(config.run_dir)
    snapshot(config, run_dir)
    kb, splits = _load_corpus(config)
    if "train" not in splits:
        raise click.UsageError("corpus.train path is required to train the retriever")
    dual_config = dataclasses.replace(config.retriever.dual, seed=config.seed)
    losses: list[float] = []
    model = train_dual_encoder(kb, splits["train"], dual_config, log=losses)
    torch.save(
        {
            "state_dict": model.state_dict(),
            "vocab": model.vocab,
            "config": dataclasses.asdict(dual_config),
        },
        run_dir / "retriever.pt",
    )
    config = dataclasses.replace(config, retriever=dataclasses.replace(config.retriever, type="dense"))
    summary = {}
    for name, split in splits.items():
        cache_path = run_dir / f"retrieval_{name}.jsonl"
        results = dense_retrieve_split(model, kb, split, k=config.retriever.top_k)
        save_retrieval_cache(results, cache_path, _retrieval_cache_hash(config))
        summary[name] = evaluate_retrieval(results, split, kb)
    (run_dir / "retrieval_metrics.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(json.dumps({"final_loss": losses[-1] if losses else None,
                           "metrics": summary}, sort_keys=True))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--split", "split_name", type=click.Choice(["train", "dev", "test"]),
              multiple=True, default=("train", "dev", "test"))
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def retrieve(config_path, split_name, seed, out):
    """Write the top-k retrieval cache for the requested splits."""
    config = _config_from(config_path, seed=seed, out=out)
    run_dir = Path(config.run_dir)
    snapshot(config, run_dir)
    kb, splits = _load_corpus(config)
    table = {}
    for name in split_name:
        if name not in splits:
            continue
        results = _retrieval_for(config, kb, splits[name], run_dir)
        table[name] = evaluate_retrieval(results, splits[name], kb)
    (run_dir / "retrieval_metrics.json").write_text(
        json.dumps(table, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(json.dumps(table, sort_keys=True))


def _labels_for(config: PipelineConfig, kb, split, run_dir: Path):
    """Load the sidecar label cache, regenerating it when the segmenter
    config (embedded as a hash) has changed."""
    cache_path = run_dir / f"labels_{split.name}.jsonl"
    seg_hash = config_hash(config.segmenter)
    if cache_path.exists():
        try:
            return load_labels(cache_path, expected_hash=seg_hash)
        except StaleCacheError:
            pass
    labels = label_split(split, kb)
    save_labels(labels, cache_path, seg_hash)
    return labels


@main.command("train-reader")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--ablate", type=str, default=None,
              help="Ablation spec: s, s+a, s+a+i, or s+a+i+f.")
@click.option("--mode", type=click.Choice(["desk", "full"]), default=None)
def train_reader(config_path, seed, out, ablate, mode):
    """Train the reader on the configured corpus."""
    config = _config_from(config_path, seed=seed, out=out, mode=mode, ablate=ablate)
    run_dir = Path(config.run_dir)
    snapshot(config, run_dir)
    kb, splits = _load_corpus(config)
    if "train" not in splits:
        raise click.UsageError("corpus.train path is required to train the reader")
    train_split = splits["train"]
    dev_split = splits.get("dev")

    retrieval_train = _retrieval_for(config, kb, train_split, run_dir)
    retrieval_dev = (
        _retrieval_for(config, kb, dev_split, run_dir) if dev_split is not None else None
    )
    labels = _labels_for(config, kb, train_split, run_dir)

    vocab = build_vocab(vocab_texts(kb, [train_split]))
    reader_config = config.model.reader_config(len(vocab))
    reader = init_reader(reader_config, config.seed)
    if config.mode == "full":
        if not config.model.pretrained_checkpoint:
            raise click.UsageError(
                "mode 'full' requires model.pretrained_checkpoint (user-supplied weights)"
            )
        pretrained, vocab, _ = load_checkpoint(config.model.pretrained_checkpoint)
        reader = pretrained

    outcome = train(
        reader,
        vocab,
        train_split,
        dev_split,
        kb,
        retrieval_train,
        retrieval_dev,
        labels,
        config.effective_training(),
        run_dir,
        checkpoint_metadata={"config_hash": config_hash(config)},
    )
    click.echo(
        json.dumps(
            {
                "checkpoint": str(outcome.checkpoint_path),
                "steps": outcome.steps,
                "best_dev_micro": outcome.best_dev_micro,
            },
            sort_keys=True,
        )
    )


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--split", "split_name", type=click.Choice(["dev", "test"]), default="dev")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--probe-labels", type=click.Path(exists=True), default=None,
              help="Ground-truth entailment labels for the diagnostic probe.")
def evaluate(config_path, checkpoint, split_name, seed, out, probe_labels):
    """Evaluate a reader checkpoint on dev or test."""
    config = _config_from(config_path, seed=seed, out=out)
    run_dir = Path(config.run_dir)
    snapshot(config, run_dir)
    kb, splits = _load_corpus(config)
    if split_name not in splits:
        raise click.UsageError(f"corpus.{split_name} path is not configured")
    split = splits[split_name]
    reader, vocab, metadata = load_checkpoint(checkpoint)
    retrieval = _retrieval_for(config, kb, split, run_dir)
    extra = {
        "checkpoint": str(checkpoint),
        "checkpoint_meta": metadata,
        "config_hash": config_hash(config),
        "split": split_name,
        "seed": config.seed,
    }
    if probe_labels:
        truth = load_labels(probe_labels)
        extra["entailment_probe"] = {
            subset: entailment_probe_accuracy(reader, vocab, split, kb, truth, subset=subset)
            for subset in ("seen", "unseen")
        }
    report, _ = evaluate_split(
        reader, vocab, split, kb, retrieval,
        k=config.evaluation.k,
        beam_size=config.evaluation.beam_size,
        max_len=config.evaluation.max_len,
        metadata=extra,
    )
    report_path = run_dir / f"report_{split_name}.json"
    report.save(report_path)
    click.echo(json.dumps(report.to_dict(), sort_keys=True))


@main.command()
@click.argument("run_dirs", nargs=-1, type=click.Path(exists=True), required=True)
def report(run_dirs):
    """Render a comparison table across run directories."""
    rows = []
    for run in run_dirs:
        run = Path(run)
        for report_path in sorted(run.glob("report_*.json")):
            data = json.loads(report_path.read_text(encoding="utf-8"))
            rows.append(
                {
                    "run": run.name,
                    "split": data.get("metadata", {}).get("split", report_path.stem),
                    "micro": data["micro_acc"],
                    "macro": data["macro_acc"],
                    "f1_bleu1": data["f1_bleu1"],
                    "f1_bleu4": data["f1_bleu4"],
                }
            )
    if not rows:
        click.echo("no reports found", err=True)
        sys.exit(1)
    header = f"{'run':<24} {'split':<6} {'Micro':>7} {'Macro':>7} {'F1B1':>7} {'F1B4':>7}"
    click.echo(header)
    click.echo("-" * len(header))
    for row in rows:
        click.echo(
            f"{row['run']:<24} {row['split']:<6} {row['micro']:>7.1f} "
            f"{row['macro']:>7.1f} {row['f1_bleu1']:>7.3f} {row['f1_bleu4']:>7.3f}"
        )


def run_cli():
    try:
        main(standalone_mode=True)
    except OcmrError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run_cli()

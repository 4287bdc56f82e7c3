"""
radcl: fact-preserving contrastive pre-training for radiology report classification.

    python main.py gen --out data/synthetic.jsonl --n-patients 200
    python main.py annotate --input data/synthetic.jsonl --out data/annotations.jsonl
    python main.py pretrain --input data/annotations.jsonl --algorithm disease-factuality --out saved_models/pre.rdcl
    python main.py finetune --input data/annotations.jsonl --checkpoint saved_models/pre.rdcl --out saved_models/ft.rdcl
    python main.py classify --checkpoint saved_models/ft.rdcl --input data/test.jsonl --out results/pred.jsonl
    python main.py evaluate --pred results/pred.jsonl --gold data/test.jsonl

Every command accepts --config (flat `key = value` file), --seed and --threads, and
writes <output>.manifest.json next to its primary output.
"""

import sys
from typing import Optional

import click
import pandas as pd
import typer

from augmentation import AugmentationPolicy, make_sampler
from checkpoint import load_checkpoint, save_checkpoint
from config import resolve, write_manifest
from constants import (
    AUG_PROBABILITY,
    DEFAULT_PRESET,
    DESK_FINETUNE_LR,
    DESK_PRETRAIN_BATCH_SIZE,
    DESK_PRETRAIN_EPOCHS,
    FINETUNE_BATCH_SIZE,
    FINETUNE_EPOCHS,
    GRAD_CLIP,
    N_NEGATIVES,
    PRETRAIN_LR,
    TAU,
    VAL_FRACTION,
)
from corpus import read_corpus, write_corpus
from evaluation import embed as embed_texts
from evaluation import evaluate as evaluate_files
from evaluation import predict, read_pairs, similarity_probe
from generate_reports import GeneratorSpec, generate
from info_preservation import annotate_reports, read_annotations, write_annotations
from initialization import init_from_checkpoint_or_scratch, init_module, reset_heads
from training import FinetuneConfig, PretrainConfig, finetune, pretrain
from utils import (
    ConfigError,
    DataError,
    NumericError,
    batch_rng,
    ensure_parent_dir,
    read_jsonl,
    set_random_seeds,
    set_threads,
    write_jsonl,
)
from visualize import plot_finetune, plot_loss

app = typer.Typer(add_completion=False, no_args_is_help=True, help="Fact-preserving contrastive pre-training toolkit.")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_COMMON = {"seed": 0, "threads": None}

GEN_DEFAULTS = {**_COMMON, "out": "data/synthetic.jsonl", "n_patients": None, "spec": None}
INGEST_DEFAULTS = {**_COMMON, "input": None, "out": "data/corpus.jsonl"}
ANNOTATE_DEFAULTS = {
    **_COMMON,
    "input": None,
    "out": "data/annotations.jsonl",
    "lexicon": None,
    "factuality": None,
    "rules": None,
}
AUGMENT_DEFAULTS = {
    **_COMMON,
    "input": None,
    "out": "data/batches.jsonl",
    "algorithm": "disease-factuality",
    "k": N_NEGATIVES,
    "batch_size": DESK_PRETRAIN_BATCH_SIZE,
    "n_batches": 1,
    "pair_key": "concept",
    "aug_probability": AUG_PROBABILITY,
}
PRETRAIN_DEFAULTS = {
    **_COMMON,
    "input": None,
    "out": "saved_models/pretrained.rdcl",
    "algorithm": "disease-factuality",
    "tau": TAU,
    "k": N_NEGATIVES,
    "epochs": DESK_PRETRAIN_EPOCHS,
    "batch_size": DESK_PRETRAIN_BATCH_SIZE,
    "lr": PRETRAIN_LR,
    "momentum": 0.0,
    "preset": DEFAULT_PRESET,
    "pair_key": "concept",
    "aug_probability": AUG_PROBABILITY,
    "grad_clip": GRAD_CLIP,
    "printed_denominator": False,
    "max_steps": None,
    "init": None,
    "telemetry": None,
}
FINETUNE_DEFAULTS = {
    **_COMMON,
    "input": None,
    "out": "saved_models/finetuned.rdcl",
    "checkpoint": None,
    "mode": "full",
    "lr": DESK_FINETUNE_LR,
    "epochs": FINETUNE_EPOCHS,
    "batch_size": FINETUNE_BATCH_SIZE,
    "n_labels": None,
    "val_fraction": VAL_FRACTION,
    "grad_clip": GRAD_CLIP,
    "preset": DEFAULT_PRESET,
}
CLASSIFY_DEFAULTS = {**_COMMON, "checkpoint": None, "input": None, "out": "results/predictions.jsonl"}
EVALUATE_DEFAULTS = {**_COMMON, "pred": None, "gold": None, "format": "table", "out": None}
PROBE_DEFAULTS = {**_COMMON, "checkpoint": None, "pairs": None, "out": "results/similarity.csv"}
EMBED_DEFAULTS = {**_COMMON, "checkpoint": None, "input": None, "out": "results/embeddings.csv"}

ConfigOpt = typer.Option(None, "--config", help="Flat `key = value` config file.")
SeedOpt = typer.Option(None, "--seed", help="Root seed (default 0, or RADCL_SEED).")
ThreadsOpt = typer.Option(None, "--threads", help="Torch threads; 1 forces deterministic kernels.")
VerboseOpt = typer.Option(False, "--verbose", "-v")


def _start(command: str, config: str | None, defaults: dict, required=("input",), **flags):
    run_config = resolve(command, flags, defaults, config)
    for key in required:
        if run_config.get(key) is None:
            raise click.UsageError(f"{command}: missing required option --{key}")
    set_threads(run_config["threads"])
    set_random_seeds(run_config.seed)
    return run_config


def _read_reports(path: str):
    """Annotated reports from either an annotation file or a corpus file (annotated on the fly)."""
    records = read_jsonl(path)
    if records and "text" in records[0]:
        return annotate_reports(read_corpus(path), init_module())
    return read_annotations(path)


@app.command()
def gen(
    out: Optional[str] = typer.Option(None, "--out"),
    n_patients: Optional[int] = typer.Option(None, "--n-patients"),
    spec: Optional[str] = typer.Option(None, "--spec", help="Generator spec as a key-value file."),
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    threads: Optional[int] = ThreadsOpt,
    verbose: bool = VerboseOpt,
):
    """Generate a synthetic labeled corpus."""
    rc = _start(
        "gen", config, GEN_DEFAULTS, required=(),
        out=out, n_patients=n_patients, spec=spec, seed=seed, threads=threads,
    )
    overrides = {"n_patients": rc["n_patients"], "seed": rc.seed}
    if rc["spec"]:
        generator_spec = GeneratorSpec.from_file(rc["spec"], **overrides)
    else:
        generator_spec = GeneratorSpec(**{k: v for k, v in overrides.items() if v is not None})
    records = generate(generator_spec)
    write_jsonl(records, rc["out"])
    write_manifest(rc["out"], rc, inputs=[rc["spec"]], artifacts=[rc["out"]])
    print(f"[gen] {len(records)} reports for {generator_spec.n_patients} patients -> {rc['out']}")


@app.command()
def ingest(
    input: Optional[str] = typer.Option(None, "--input", help="Raw JSONL {report_id, patient_id, text[, labels]}."),
    out: Optional[str] = typer.Option(None, "--out"),
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    threads: Optional[int] = ThreadsOpt,
    verbose: bool = VerboseOpt,
):
    """Normalize and sentence-split a raw report file."""
    rc = _start("ingest", config, INGEST_DEFAULTS, input=input, out=out, seed=seed, threads=threads)
    reports = read_corpus(rc["input"])
    write_corpus(reports, rc["out"])
    write_manifest(rc["out"], rc, inputs=[rc["input"]], artifacts=[rc["out"]])
    n_sentences = sum(len(r.sentences) for r in reports)
    print(f"[ingest] {len(reports)} reports, {n_sentences} sentences -> {rc['out']}")


@app.command()
def annotate(
    input: Optional[str] = typer.Option(None, "--input"),
    out: Optional[str] = typer.Option(None, "--out"),
    lexicon: Optional[str] = typer.Option(None, "--lexicon", help="Concept lexicon TSV."),
    factuality: Optional[str] = typer.Option(None, "--factuality", help="Negation/uncertainty lexicon TSV."),
    rules: Optional[str] = typer.Option(None, "--rules", help="Pattern rule file."),
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    threads: Optional[int] = ThreadsOpt,
    verbose: bool = VerboseOpt,
):
    """Run the info-preservation module over a corpus."""
    rc = _start(
        "annotate", config, ANNOTATE_DEFAULTS,
        input=input, out=out, lexicon=lexicon, factuality=factuality, rules=rules, seed=seed, threads=threads,
    )
    module = init_module(rc["lexicon"], rc["factuality"], rc["rules"])
    reports = read_corpus(rc["input"])
    annotated = annotate_reports(reports, module, rc["threads"] or 1)
    write_annotations(annotated, rc["out"])
    write_manifest(
        rc["out"], rc,
        inputs=[rc["input"], rc["lexicon"], rc["factuality"], rc["rules"]],
        artifacts=[rc["out"]],
    )
    n_sampleable = sum(s.sampleable for r in annotated for s in r.sentences)
    print(f"[annotate] {len(annotated)} reports, {n_sampleable} sampleable sentences -> {rc['out']}")


@app.command()
def augment(
    input: Optional[str] = typer.Option(None, "--input", help="Annotation JSONL."),
    out: Optional[str] = typer.Option(None, "--out"),
    algorithm: Optional[str] = typer.Option(None, "--algorithm", help="patient | disease | disease-factuality"),
    k: Optional[int] = typer.Option(None, "--k"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size"),
    n_batches: Optional[int] = typer.Option(None, "--n-batches"),
    pair_key: Optional[str] = typer.Option(None, "--pair-key", help="concept | observation"),
    aug_probability: Optional[float] = typer.Option(None, "--aug-probability"),
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    threads: Optional[int] = ThreadsOpt,
    verbose: bool = VerboseOpt,
):
    """Sample contrastive batches and write them out for inspection."""
    rc = _start(
        "augment", config, AUGMENT_DEFAULTS,
        input=input, out=out, algorithm=algorithm, k=k, batch_size=batch_size, n_batches=n_batches,
        pair_key=pair_key, aug_probability=aug_probability, seed=seed, threads=threads,
    )
    reports = read_annotations(rc["input"])
    sampler = make_sampler(rc["algorithm"], reports, rc["k"], rc["pair_key"])
    policy = AugmentationPolicy.default(seed=rc.seed, probability=rc["aug_probability"])
    records = []
    for b in range(rc["n_batches"]):
        batch = sampler.batch(rc["batch_size"], policy, batch_rng(rc.seed, 0, b))
        records.extend({"batch": b, **record} for record in batch.to_records())
    write_jsonl(records, rc["out"])
    write_manifest(rc["out"], rc, inputs=[rc["input"]], artifacts=[rc["out"]])
    print(f"[augment] {len(records)} rows in {rc['n_batches']} batches -> {rc['out']}")


@app.command("pretrain")
def pretrain_command(
    input: Optional[str] = typer.Option(None, "--input", help="Annotation JSONL."),
    out: Optional[str] = typer.Option(None, "--out", help="Checkpoint path."),
    algorithm: Optional[str] = typer.Option(None, "--algorithm", help="patient | disease | disease-factuality"),
    tau: Optional[float] = typer.Option(None, "--tau"),
    k: Optional[int] = typer.Option(None, "--k"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size"),
    lr: Optional[float] = typer.Option(None, "--lr"),
    momentum: Optional[float] = typer.Option(None, "--momentum"),
    preset: Optional[str] = typer.Option(None, "--preset", help="tiny | small | desk | base"),
    pair_key: Optional[str] = typer.Option(None, "--pair-key"),
    aug_probability: Optional[float] = typer.Option(None, "--aug-probability"),
    grad_clip: Optional[float] = typer.Option(None, "--grad-clip"),
    printed_denominator: Optional[bool] = typer.Option(None, "--printed-denominator/--full-denominator"),
    max_steps: Optional[int] = typer.Option(None, "--max-steps", help="Cap on batches per epoch."),
    init: Optional[str] = typer.Option(None, "--init", help="Start from this checkpoint."),
    telemetry: Optional[str] = typer.Option(None, "--telemetry", help="Loss CSV (default <out>.loss.csv)."),
    plot: bool = typer.Option(False, "--plot"),
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    threads: Optional[int] = ThreadsOpt,
    verbose: bool = VerboseOpt,
):
    """Contrastive pre-training of the encoder."""
    rc = _start(
        "pretrain", config, PRETRAIN_DEFAULTS,
        input=input, out=out, algorithm=algorithm, tau=tau, k=k, epochs=epochs, batch_size=batch_size, lr=lr,
        momentum=momentum, preset=preset, pair_key=pair_key, aug_probability=aug_probability, grad_clip=grad_clip,
        printed_denominator=printed_denominator, max_steps=max_steps, init=init, telemetry=telemetry,
        seed=seed, threads=threads,
    )
    pretrain_config = PretrainConfig(
        algorithm=rc["algorithm"],
        tau=rc["tau"],
        k=rc["k"],
        batch_size=rc["batch_size"],
        epochs=rc["epochs"],
        lr=rc["lr"],
        momentum=rc["momentum"],
        seed=rc.seed,
        pair_key=rc["pair_key"],
        aug_probability=rc["aug_probability"],
        grad_clip=rc["grad_clip"],
        printed_denominator=rc["printed_denominator"],
        max_steps_per_epoch=rc["max_steps"],
    )
    reports = read_annotations(rc["input"])
    model, vocab, _ = init_from_checkpoint_or_scratch(rc["init"], reports, rc["preset"], rc.seed)
    model, losses = pretrain(model, vocab, reports, pretrain_config, verbose=verbose)

    metadata = {
        "stage": "pretrain",
        "algorithm": pretrain_config.algorithm,
        "projection_head": "discard-at-fine-tune",
        "preset": rc["preset"],
        "config": pretrain_config.to_dict(),
    }
    save_checkpoint(rc["out"], model, vocab, metadata)
    telemetry_path = rc["telemetry"] or f"{rc['out']}.loss.csv"
    ensure_parent_dir(telemetry_path)
    losses.to_csv(telemetry_path, index=False)
    artifacts = [rc["out"], telemetry_path]
    if plot and len(losses):
        plot_loss(losses, f"{rc['out']}.loss.pdf", title=f"Pre-training ({pretrain_config.algorithm})")
    write_manifest(rc["out"], rc, inputs=[rc["input"], rc["init"]], artifacts=artifacts)
    final = f"{losses['loss'].iloc[-1]:.4f}" if len(losses) else "-"
    print(f"[pretrain] {len(losses)} steps, final loss {final} -> {rc['out']}")


@app.command("finetune")
def finetune_command(
    input: Optional[str] = typer.Option(None, "--input", help="Labeled annotation JSONL."),
    out: Optional[str] = typer.Option(None, "--out", help="Checkpoint path."),
    checkpoint: Optional[str] = typer.Option(None, "--checkpoint", help="Pre-trained checkpoint; random init if omitted."),
    mode: Optional[str] = typer.Option(None, "--mode", help="linear | full"),
    lr: Optional[float] = typer.Option(None, "--lr"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size"),
    n_labels: Optional[int] = typer.Option(None, "--n-labels", help="Use only this many labeled reports."),
    val_fraction: Optional[float] = typer.Option(None, "--val-fraction"),
    grad_clip: Optional[float] = typer.Option(None, "--grad-clip"),
    preset: Optional[str] = typer.Option(None, "--preset"),
    plot: bool = typer.Option(False, "--plot"),
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    threads: Optional[int] = ThreadsOpt,
    verbose: bool = VerboseOpt,
):
    """Fine-tune the 14 classification heads (linear) or the whole network (full)."""
    rc = _start(
        "finetune", config, FINETUNE_DEFAULTS,
        input=input, out=out, checkpoint=checkpoint, mode=mode, lr=lr, epochs=epochs, batch_size=batch_size,
        n_labels=n_labels, val_fraction=val_fraction, grad_clip=grad_clip, preset=preset,
        seed=seed, threads=threads,
    )

    finetune_config = FinetuneConfig(
        mode=rc["mode"],
        lr=rc["lr"],
        epochs=rc["epochs"],
        batch_size=rc["batch_size"],
        seed=rc.seed,
        val_fraction=rc["val_fraction"],
        n_labels=rc["n_labels"],
        grad_clip=rc["grad_clip"],
    )
    reports = read_annotations(rc["input"])
    model, vocab, init_metadata = init_from_checkpoint_or_scratch(rc["checkpoint"], reports, rc["preset"], rc.seed)
    if rc["checkpoint"]:
        reset_heads(model, rc.seed)
    model, history = finetune(model, vocab, reports, finetune_config, verbose=verbose)

    metadata = {
        "stage": "finetune",
        "mode": finetune_config.mode,
        "init": init_metadata.get("stage", "init"),
        "algorithm": init_metadata.get("algorithm"),
        "config": finetune_config.to_dict(),
    }
    save_checkpoint(rc["out"], model, vocab, metadata)
    history_path = f"{rc['out']}.history.csv"
    history.to_csv(history_path, index=False)
    if plot and len(history):
        plot_finetune(history, f"{rc['out']}.history.pdf")
    write_manifest(rc["out"], rc, inputs=[rc["input"], rc["checkpoint"]], artifacts=[rc["out"], history_path])
    best = f"{history['val_loss'].min():.4f}" if len(history) else "-"
    print(f"[finetune] {len(history)} epochs, best val loss {best} -> {rc['out']}")


@app.command()
def classify(
    checkpoint: Optional[str] = typer.Option(None, "--checkpoint"),
    input: Optional[str] = typer.Option(None, "--input", help="Corpus or annotation JSONL."),
    out: Optional[str] = typer.Option(None, "--out"),
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    threads: Optional[int] = ThreadsOpt,
    verbose: bool = VerboseOpt,
):
    """Predict the 14 observation labels for each report."""
    rc = _start(
        "classify", config, CLASSIFY_DEFAULTS, required=("checkpoint", "input"),
        checkpoint=checkpoint, input=input, out=out, seed=seed, threads=threads,
    )
    model, vocab, _ = load_checkpoint(rc["checkpoint"])
    reports = _read_reports(rc["input"])
    records = predict(model, vocab, reports)
    write_jsonl(records, rc["out"])
    write_manifest(rc["out"], rc, inputs=[rc["checkpoint"], rc["input"]], artifacts=[rc["out"]])
    print(f"[classify] {len(records)} predictions -> {rc['out']}")


@app.command()
def evaluate(
    pred: Optional[str] = typer.Option(None, "--pred", help="Prediction JSONL."),
    gold: Optional[str] = typer.Option(None, "--gold", help="Gold JSONL with report_id and labels."),
    format: Optional[str] = typer.Option(None, "--format", help="table | csv"),
    out: Optional[str] = typer.Option(None, "--out", help="CSV path for the report."),
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    threads: Optional[int] = ThreadsOpt,
    verbose: bool = VerboseOpt,
):
    """Per-category F1 and weighted-F1 of predictions against gold labels."""
    rc = _start(
        "evaluate", config, EVALUATE_DEFAULTS, required=("pred", "gold"),
        pred=pred, gold=gold, format=format, out=out, seed=seed, threads=threads,
    )
    if rc["format"] not in ("table", "csv"):
        raise click.BadParameter(f"format must be 'table' or 'csv', got {rc['format']!r}")
    report = evaluate_files(rc["pred"], rc["gold"])
    if rc["out"]:
        ensure_parent_dir(rc["out"])
        report.to_csv(rc["out"])
        write_manifest(rc["out"], rc, inputs=[rc["pred"], rc["gold"]], artifacts=[rc["out"]])
    else:
        # stdout-only runs are recorded next to the predictions
        write_manifest(f"{rc['pred']}.eval", rc, inputs=[rc["pred"], rc["gold"]])
    if rc["format"] == "csv" and not rc["out"]:
        report.to_csv(sys.stdout)
    else:
        print(report.pretty())


@app.command("probe-similarity")
def probe_similarity(
    checkpoint: Optional[str] = typer.Option(None, "--checkpoint"),
    pairs: Optional[str] = typer.Option(None, "--pairs", help="TSV of sentence_a<TAB>sentence_b."),
    out: Optional[str] = typer.Option(None, "--out"),
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    threads: Optional[int] = ThreadsOpt,
    verbose: bool = VerboseOpt,
):
    """Cosine similarity of CLS embeddings for sentence pairs."""
    rc = _start(
        "probe-similarity", config, PROBE_DEFAULTS, required=("checkpoint", "pairs"),
        checkpoint=checkpoint, pairs=pairs, out=out, seed=seed, threads=threads,
    )
    model, vocab, _ = load_checkpoint(rc["checkpoint"])
    table = similarity_probe(model, vocab, read_pairs(rc["pairs"]))
    ensure_parent_dir(rc["out"])
    table.to_csv(rc["out"], index=False)
    write_manifest(rc["out"], rc, inputs=[rc["checkpoint"], rc["pairs"]], artifacts=[rc["out"]])
    if verbose:
        print(table.to_string(index=False, float_format=lambda x: f"{x:.4f}"))
    print(f"[probe] {len(table)} pairs -> {rc['out']}")


@app.command()
def embed(
    checkpoint: Optional[str] = typer.Option(None, "--checkpoint"),
    input: Optional[str] = typer.Option(None, "--input", help="Text file, one sentence per line."),
    out: Optional[str] = typer.Option(None, "--out"),
    config: Optional[str] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    threads: Optional[int] = ThreadsOpt,
    verbose: bool = VerboseOpt,
):
    """Export normalized CLS embeddings for external plotting."""
    rc = _start(
        "embed", config, EMBED_DEFAULTS, required=("checkpoint", "input"),
        checkpoint=checkpoint, input=input, out=out, seed=seed, threads=threads,
    )
    model, vocab, _ = load_checkpoint(rc["checkpoint"])
    with open(rc["input"], "r", encoding="utf-8") as f:
        texts = [line.strip() for line in f if line.strip()]
    matrix = embed_texts(model, vocab, texts)
    table = pd.DataFrame(matrix, columns=[f"d{i}" for i in range(matrix.shape[1])])
    table.insert(0, "text", texts)
    ensure_parent_dir(rc["out"])
    table.to_csv(rc["out"], index=False)
    write_manifest(rc["out"], rc, inputs=[rc["checkpoint"], rc["input"]], artifacts=[rc["out"]])
    print(f"[embed] {len(texts)} texts x {matrix.shape[1]} dims -> {rc['out']}")


def dispatch(argv) -> int:
    """Run one subcommand and map the outcome to an exit code."""
    command = typer.main.get_command(app)
    try:
        result = command.main(args=list(argv), prog_name="radcl", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except ConfigError as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_DATA
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(dispatch(sys.argv[1:]))

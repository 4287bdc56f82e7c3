import json
import os

import pandas as pd
import pytest

from checkpoint import load_checkpoint
from main import EXIT_DATA, EXIT_OK, EXIT_USAGE, dispatch
from utils import read_jsonl


def test_help():
    assert dispatch(["--help"]) == EXIT_OK
    assert dispatch(["pretrain", "--help"]) == EXIT_OK


def test_unknown_flag():
    assert dispatch(["annotate", "--frobnicate"]) == EXIT_USAGE


def test_missing_required_option():
    assert dispatch(["classify", "--input", "x.jsonl"]) == EXIT_USAGE


def test_missing_input_file(tmp_path):
    assert dispatch(["annotate", "--input", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path / "a.jsonl")]) == EXIT_DATA


def test_bad_config_value(tmp_path):
    config = tmp_path / "run.conf"
    config.write_text("k = many\n")
    assert dispatch(["augment", "--input", "x.jsonl", "--config", str(config)]) == EXIT_USAGE


def test_unknown_algorithm(tmp_path):
    data = str(tmp_path / "gen.jsonl")
    annotations = str(tmp_path / "ann.jsonl")
    assert dispatch(["gen", "--out", data, "--n-patients", "4"]) == EXIT_OK
    assert dispatch(["annotate", "--input", data, "--out", annotations]) == EXIT_OK
    assert dispatch(["augment", "--input", annotations, "--algorithm", "random", "--out", str(tmp_path / "b.jsonl")]) == EXIT_USAGE


def test_gen_is_seeded(tmp_path):
    a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    assert dispatch(["gen", "--out", a, "--n-patients", "5", "--seed", "3"]) == EXIT_OK
    assert dispatch(["gen", "--out", b, "--n-patients", "5", "--seed", "3"]) == EXIT_OK
    assert read_jsonl(a) == read_jsonl(b)
    with open(f"{a}.manifest.json") as f:
        assert json.load(f)["seed"] == 3


def test_pipeline(tmp_path):
    data = str(tmp_path / "data" / "gen.jsonl")
    annotations = str(tmp_path / "data" / "ann.jsonl")
    batches = str(tmp_path / "data" / "batches.jsonl")
    pre = str(tmp_path / "models" / "pre.rdcl")
    ft = str(tmp_path / "models" / "ft.rdcl")
    preds = str(tmp_path / "results" / "pred.jsonl")
    scores = str(tmp_path / "results" / "eval.csv")
    pairs = tmp_path / "pairs.tsv"
    pairs.write_text("No pleural effusion.\tThere is a pleural effusion.\n")
    sentences = tmp_path / "sentences.txt"
    sentences.write_text("Lungs are clear.\nMild pulmonary edema.\n")

    steps = [
        ["gen", "--out", data, "--n-patients", "20", "--seed", "1"],
        ["annotate", "--input", data, "--out", annotations],
        ["augment", "--input", annotations, "--out", batches, "--k", "2", "--batch-size", "4", "--n-batches", "2"],
        ["pretrain", "--input", annotations, "--out", pre, "--preset", "tiny", "--epochs", "1", "--k", "2",
         "--batch-size", "8", "--max-steps", "2"],
        ["finetune", "--input", annotations, "--checkpoint", pre, "--out", ft, "--epochs", "1", "--mode", "linear"],
        ["classify", "--checkpoint", ft, "--input", data, "--out", preds],
        ["evaluate", "--pred", preds, "--gold", data, "--format", "csv", "--out", scores],
        ["evaluate", "--pred", preds, "--gold", data],
        ["probe-similarity", "--checkpoint", ft, "--pairs", str(pairs), "--out", str(tmp_path / "probe.csv")],
        ["embed", "--checkpoint", ft, "--input", str(sentences), "--out", str(tmp_path / "emb.csv")],
    ]
    for argv in steps:
        assert dispatch(argv) == EXIT_OK, argv

    assert len(read_jsonl(batches)) == 8
    _, _, metadata = load_checkpoint(pre)
    assert metadata["stage"] == "pretrain"
    assert metadata["projection_head"] == "discard-at-fine-tune"
    _, _, metadata = load_checkpoint(ft)
    assert (metadata["stage"], metadata["init"], metadata["mode"]) == ("finetune", "pretrain", "linear")
    assert os.path.isfile(f"{pre}.loss.csv")
    assert os.path.isfile(f"{ft}.history.csv")
    assert len(read_jsonl(preds)) == len(read_jsonl(data))
    assert "Average" in pd.read_csv(scores, index_col="category").index
    assert pd.read_csv(tmp_path / "emb.csv").shape == (2, 1 + 8)
    for output in (data, annotations, pre, ft, preds, scores):
        assert os.path.isfile(f"{output}.manifest.json")
    with open(f"{preds}.eval.manifest.json") as f:
        manifest = json.load(f)
    assert manifest["command"] == "evaluate"
    assert set(manifest["inputs"]) == {preds, data}


@pytest.mark.slow
def test_factuality_sampler_runs_on_larger_corpus(tmp_path):
    data = str(tmp_path / "gen.jsonl")
    annotations = str(tmp_path / "ann.jsonl")
    assert dispatch(["gen", "--out", data, "--n-patients", "100"]) == EXIT_OK
    assert dispatch(["annotate", "--input", data, "--out", annotations, "--threads", "2"]) == EXIT_OK
    assert dispatch(["pretrain", "--input", annotations, "--out", str(tmp_path / "pre.rdcl"), "--preset", "small",
                     "--epochs", "3"]) == EXIT_OK



def _run_pipeline(root):
    os.makedirs(root, exist_ok=True)
    names = ("gen.jsonl", "ann.jsonl", "pre.rdcl", "ft.rdcl", "pred.jsonl", "eval.csv")
    paths = {name: os.path.join(root, name) for name in names}
    common = ["--seed", "5", "--threads", "1"]
    steps = [
        ["gen", "--out", paths["gen.jsonl"], "--n-patients", "30"],
        ["annotate", "--input", paths["gen.jsonl"], "--out", paths["ann.jsonl"]],
        ["pretrain", "--input", paths["ann.jsonl"], "--out", paths["pre.rdcl"], "--preset", "tiny", "--epochs", "2",
         "--k", "2", "--batch-size", "8"],
        ["finetune", "--input", paths["ann.jsonl"], "--checkpoint", paths["pre.rdcl"], "--out", paths["ft.rdcl"],
         "--epochs", "2"],
        ["classify", "--checkpoint", paths["ft.rdcl"], "--input", paths["gen.jsonl"], "--out", paths["pred.jsonl"]],
        ["evaluate", "--pred", paths["pred.jsonl"], "--gold", paths["gen.jsonl"], "--out", paths["eval.csv"]],
    ]
    for argv in steps:
        assert dispatch(argv + common) == EXIT_OK, argv
    hashes = {}
    for name, path in paths.items():
        with open(f"{path}.manifest.json") as f:
            manifest = json.load(f)
        hashes[name] = manifest["artifacts"][path]
    return paths, hashes


@pytest.mark.slow
def test_single_thread_pipeline_is_byte_identical(tmp_path):
    paths_a, hashes_a = _run_pipeline(str(tmp_path / "a"))
    paths_b, hashes_b = _run_pipeline(str(tmp_path / "b"))
    assert hashes_a == hashes_b
    for name in ("pre.rdcl", "ft.rdcl", "eval.csv"):
        with open(paths_a[name], "rb") as fa, open(paths_b[name], "rb") as fb:
            assert fa.read() == fb.read(), name

import copy
import os

import numpy as np
import pandas as pd
import torch
import typer
from tqdm import tqdm

from constants import DESK_FINETUNE_LR, FINETUNE_MODES
from corpus import report_from_record
from datasets import split_by_patient
from evaluation import eval_report, embed, predict
from generate_reports import GeneratorSpec, generate
from info_preservation import Factuality, annotate_reports, default_module, sentence_pool
from initialization import init_encoder_config, init_model, init_vocabulary, reset_heads
from summarize import summarize_experiment
from training import FinetuneConfig, PretrainConfig, finetune, pretrain
from utils import set_random_seeds


def synthetic_split(n_patients: int, seed: int, test_fraction: float = 0.2):
    """Annotated synthetic corpus split into patient-disjoint train and test reports."""
    records = generate(GeneratorSpec(n_patients=n_patients, seed=seed))
    annotated = annotate_reports([report_from_record(r) for r in records], default_module())
    return split_by_patient(annotated, test_fraction, np.random.default_rng(seed))


def pretrained_and_random(train_reports, preset: str, seed: int, pretrain_config: PretrainConfig, verbose=False):
    vocab = init_vocabulary(train_reports)
    config = init_encoder_config(preset, len(vocab))
    pretrained, _ = pretrain(init_model(config, seed), vocab, train_reports, pretrain_config, verbose=verbose)
    random_init = init_model(config, seed)
    return vocab, {"pretrained": pretrained, "random": random_init}


def limited_label_experiment(
    seeds=(0, 1, 2),
    n_labels=(10, 50),
    n_patients: int = 120,
    preset: str = "tiny",
    pretrain_epochs: int = 5,
    finetune_epochs: int = 10,
    modes=tuple(FINETUNE_MODES),
    lr: float = DESK_FINETUNE_LR,
    verbose: bool = False,
) -> pd.DataFrame:
    """
    Few-label protocol: encoders pre-trained with the disease-factuality sampler
    against randomly initialized ones, each fine-tuned on n labeled reports and
    scored by the average weighted-F1 on held-out patients.
    """
    rows = []
    for seed in seeds:
        set_random_seeds(seed)
        train_reports, test_reports = synthetic_split(n_patients, seed)
        pretrain_config = PretrainConfig(algorithm="disease-factuality", epochs=pretrain_epochs, seed=seed)
        vocab, encoders = pretrained_and_random(train_reports, preset, seed, pretrain_config, verbose)
        golds = [r.gold_labels() for r in test_reports]
        for name, base_model in encoders.items():
            for mode in modes:
                for n in n_labels:
                    model = copy.deepcopy(base_model)
                    reset_heads(model, seed)
                    config = FinetuneConfig(mode=mode, lr=lr, epochs=finetune_epochs, seed=seed, n_labels=n)
                    model, _ = finetune(model, vocab, train_reports, config)
                    preds = [p["labels"] for p in predict(model, vocab, test_reports)]
                    score = eval_report(preds, golds).average_weighted_f1
                    rows.append({"seed": seed, "encoder": name, "mode": mode, "n_labels": n, "weighted_f1": score})
                    if verbose:
                        print(f"[experiment] seed={seed}, {name}/{mode}, n={n}: weighted-F1 {score}")
    return pd.DataFrame(rows, columns=["seed", "encoder", "mode", "n_labels", "weighted_f1"])


def factuality_pairs(sentences, n_pairs: int, rng: np.random.Generator):
    """(opposite, same) lists of n_pairs same-disease sentence text pairs each; empty when no disease qualifies."""
    by_key = {}
    for s in sentences:
        by_key.setdefault((s.primary_concept, s.primary_factuality is Factuality.AFFIRMED), []).append(s.text)
    concepts = sorted({c for c, _ in by_key})
    opposite_pool = [(by_key[c, True], by_key[c, False]) for c in concepts if (c, True) in by_key and (c, False) in by_key]
    same_pool = [group for group in by_key.values() if len(group) >= 2]

    opposite, same = [], []
    if opposite_pool:
        for _ in range(n_pairs):
            affirmed, other = opposite_pool[int(rng.integers(len(opposite_pool)))]
            opposite.append((affirmed[int(rng.integers(len(affirmed)))], other[int(rng.integers(len(other)))]))
    if same_pool:
        for _ in range(n_pairs):
            group = same_pool[int(rng.integers(len(same_pool)))]
            i, j = rng.choice(len(group), size=2, replace=False)
            same.append((group[int(i)], group[int(j)]))
    return opposite, same


def _mean_cosine(model, vocab, pairs) -> float:
    if not pairs:
        return float("nan")
    a = embed(model, vocab, [x for x, _ in pairs])
    b = embed(model, vocab, [y for _, y in pairs])
    return float(np.mean((a * b).sum(axis=1)))


def factuality_separation_experiment(
    seeds=(0, 1, 2),
    n_pairs: int = 50,
    n_patients: int = 120,
    preset: str = "tiny",
    pretrain_epochs: int = 5,
    verbose: bool = False,
) -> pd.DataFrame:
    """Mean cosine of factually opposite vs same-factuality sentence pairs about one disease."""
    rows = []
    for seed in tqdm(seeds, desc="seeds", disable=not verbose):
        set_random_seeds(seed)
        train_reports, test_reports = synthetic_split(n_patients, seed)
        pretrain_config = PretrainConfig(algorithm="disease-factuality", epochs=pretrain_epochs, seed=seed)
        vocab, encoders = pretrained_and_random(train_reports, preset, seed, pretrain_config, verbose)
        opposite, same = factuality_pairs(sentence_pool(test_reports), n_pairs, np.random.default_rng(seed))
        for name, model in encoders.items():
            with torch.no_grad():
                rows.append({"seed": seed, "encoder": name, "pairs": "opposite", "cosine": _mean_cosine(model, vocab, opposite)})
                rows.append({"seed": seed, "encoder": name, "pairs": "same", "cosine": _mean_cosine(model, vocab, same)})
    return pd.DataFrame(rows, columns=["seed", "encoder", "pairs", "cosine"])


def main(
    experiment: str = "limited-labels",  # ["limited-labels", "factuality-separation"]
    seeds: int = 3,
    n_patients: int = 120,
    preset: str = "tiny",
    pretrain_epochs: int = 5,
    output_dir: str = "results",
    verbose: bool = False,
):
    os.makedirs(output_dir, exist_ok=True)
    seed_list = tuple(range(seeds))
    if experiment == "limited-labels":
        df = limited_label_experiment(seed_list, n_patients=n_patients, preset=preset, pretrain_epochs=pretrain_epochs, verbose=verbose)
        path = os.path.join(output_dir, "limited_labels.csv")
        summary = summarize_experiment(df, "weighted_f1", ["encoder", "mode", "n_labels"])
    elif experiment == "factuality-separation":
        df = factuality_separation_experiment(seed_list, n_patients=n_patients, preset=preset, pretrain_epochs=pretrain_epochs, verbose=verbose)
        path = os.path.join(output_dir, "factuality_separation.csv")
        summary = summarize_experiment(df, "cosine", ["encoder", "pairs"])
    else:
        raise typer.BadParameter(f"unknown experiment {experiment!r}")
    df.to_csv(path, index=False)
    print(summary.to_string(index=False, float_format=lambda x: f"{x:.3f}"))
    print(f"[experiment] {len(df)} rows -> {path}")


if __name__ == "__main__":
    typer.run(main)

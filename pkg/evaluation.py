"""
Metrics (per-task F1, weighted-F1, EvalReport) and inference helpers
(classify, predict, embed, similarity_probe).
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from constants import FINETUNE_BATCH_SIZE, OBSERVATIONS
from corpus import tokenize
from datasets import encode_batch
from labels import LabelClass, LabelDomainError, LabelVector
from utils import DataError, read_jsonl


class LengthMismatch(DataError):
    pass


class SchemaError(DataError):
    pass


TASKS = [
    (LabelClass.POSITIVE, "positive_f1"),
    (LabelClass.NEGATIVE, "negation_f1"),
    (LabelClass.UNCERTAIN, "uncertain_f1"),
]
REPORT_COLUMNS = [
    "positive_f1",
    "negation_f1",
    "uncertain_f1",
    "blank_f1",
    "weighted_f1",
    "support_positive",
    "support_negative",
    "support_uncertain",
    "support_blank",
]


def _as_classes(values, category=None) -> np.ndarray:
    rows = [v.to_ints() if isinstance(v, LabelVector) else v for v in values]
    if rows and isinstance(rows[0], (list, tuple, np.ndarray)):
        idx = OBSERVATIONS.index(category) if isinstance(category, str) else category
        rows = [row[idx] for row in rows]
    return np.array([int(LabelClass.parse(v)) for v in rows], dtype=int)


def _aligned(preds, golds, category):
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} gold labels")
    return _as_classes(preds, category), _as_classes(golds, category)


def f1_score(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def per_task_f1(preds, golds, category=None, task_class=LabelClass.POSITIVE) -> float:
    """One-vs-rest F1 for task_class on one category's slot."""
    p, g = _aligned(preds, golds, category)
    task = int(LabelClass.parse(task_class))
    tp = int(np.sum((p == task) & (g == task)))
    fp = int(np.sum((p == task) & (g != task)))
    fn = int(np.sum((p != task) & (g == task)))
    return f1_score(tp, fp, fn)


def support(golds, category=None, task_class=LabelClass.POSITIVE) -> int:
    return int(np.sum(_as_classes(golds, category) == int(LabelClass.parse(task_class))))


def weighted_f1(preds, golds, category=None) -> float | None:
    """Gold-support-weighted mean of positive/negation/uncertain F1; None when none of them occur."""
    _aligned(preds, golds, category)
    supports = [support(golds, category, task) for task, _ in TASKS]
    total = sum(supports)
    if total == 0:
        return None
    f1s = [per_task_f1(preds, golds, category, task) for task, _ in TASKS]
    return sum(s * f for s, f in zip(supports, f1s)) / total


@dataclass
class EvalReport:
    table: pd.DataFrame
    average_weighted_f1: float | None

    def to_csv(self, path: str):
        out = self.table.copy()
        out.loc["Average"] = [np.nan] * 4 + [self.average_weighted_f1] + [np.nan] * 4
        out.to_csv(path, index_label="category")

    def pretty(self) -> str:
        shown = self.table[["positive_f1", "negation_f1", "uncertain_f1", "blank_f1", "weighted_f1"]]
        text = shown.to_string(float_format=lambda x: f"{x:.3f}", na_rep="-")
        average = "-" if self.average_weighted_f1 is None else f"{self.average_weighted_f1:.3f}"
        return f"{text}\nAverage weighted-F1: {average}"


def eval_report(preds, golds) -> EvalReport:
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} gold labels")
    rows = {}
    for category in OBSERVATIONS:
        row = {name: per_task_f1(preds, golds, category, task) for task, name in TASKS}
        row["blank_f1"] = per_task_f1(preds, golds, category, LabelClass.BLANK)
        row["weighted_f1"] = weighted_f1(preds, golds, category)
        row["support_positive"] = support(golds, category, LabelClass.POSITIVE)
        row["support_negative"] = support(golds, category, LabelClass.NEGATIVE)
        row["support_uncertain"] = support(golds, category, LabelClass.UNCERTAIN)
        row["support_blank"] = support(golds, category, LabelClass.BLANK)
        rows[category] = row
    table = pd.DataFrame.from_dict(rows, orient="index")[REPORT_COLUMNS]
    present = [v for v in table["weighted_f1"] if v is not None and not pd.isna(v)]
    average = float(np.mean(present)) if present else None
    return EvalReport(table=table, average_weighted_f1=average)


def _label_map(path: str, role: str) -> dict[str, LabelVector]:
    records = read_jsonl(path)
    if not records:
        raise SchemaError(f"{role} file {path} is empty")
    out = {}
    for i, record in enumerate(records):
        if "report_id" not in record or "labels" not in record or record["labels"] is None:
            raise SchemaError(f"{path}: record {i} needs 'report_id' and 'labels'")
        try:
            out[str(record["report_id"])] = LabelVector.parse(record["labels"])
        except LabelDomainError as e:
            raise SchemaError(f"{path}: record {i}: {e}") from e
    return out


def evaluate(pred_file: str, gold_file: str) -> EvalReport:
    preds = _label_map(pred_file, "prediction")
    golds = _label_map(gold_file, "gold")
    missing = sorted(set(golds) - set(preds))
    if missing:
        raise SchemaError(f"{len(missing)} gold reports have no prediction (first: {missing[0]!r})")
    ids = list(golds)
    return eval_report([preds[i] for i in ids], [golds[i] for i in ids])


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


@torch.no_grad()
def classify_batch(model, vocab, reports) -> list[tuple[LabelVector, list[np.ndarray]]]:
    model.eval()
    ids = encode_batch(vocab, [r.body_lemmas() for r in reports], model.config.max_seq_len)
    probs = [F.softmax(logits, dim=-1).numpy() for logits in model(ids)]
    out = []
    for i in range(len(reports)):
        # np.argmax returns the first maximum: Blank < Positive < Negative < Uncertain on ties
        labels = tuple(LabelClass(int(np.argmax(p[i]))) for p in probs)
        out.append((LabelVector(labels), [p[i] for p in probs]))
    return out


def classify(model, vocab, report) -> tuple[LabelVector, list[np.ndarray]]:
    return classify_batch(model, vocab, [report])[0]


def predict(model, vocab, reports, batch_size: int = FINETUNE_BATCH_SIZE) -> list[dict]:
    reports = list(reports)
    records = []
    for start in range(0, len(reports), batch_size):
        chunk = reports[start : start + batch_size]
        for report, (labels, probs) in zip(chunk, classify_batch(model, vocab, chunk)):
            records.append(
                {
                    "report_id": report.report_id,
                    "labels": labels.to_strings(),
                    "probabilities": {obs: [round(float(x), 6) for x in p] for obs, p in zip(OBSERVATIONS, probs)},
                }
            )
    return records


def text_lemmas(text: str) -> list[str]:
    return [t.lemma for t in tokenize(text)]


@torch.no_grad()
def embed(model, vocab, texts) -> np.ndarray:
    """L2-normalized [CLS] embeddings, one row per text."""
    model.eval()
    texts = list(texts)
    if not texts:
        return np.zeros((0, model.config.d_model), dtype=np.float32)
    ids = encode_batch(vocab, [text_lemmas(t) for t in texts], model.config.max_seq_len)
    return F.normalize(model.encode(ids), dim=-1).numpy()


def similarity_probe(model, vocab, sentence_pairs) -> pd.DataFrame:
    pairs = list(sentence_pairs)
    a = embed(model, vocab, [x for x, _ in pairs])
    b = embed(model, vocab, [y for _, y in pairs])
    cosine = (a * b).sum(axis=1) if pairs else np.zeros(0)
    return pd.DataFrame(
        {"sentence_a": [x for x, _ in pairs], "sentence_b": [y for _, y in pairs], "cosine": cosine.astype(float)}
    )


def read_pairs(path: str) -> list[tuple[str, str]]:
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2:
                raise DataError(f"{path}:{line_no}: expected sentence_a<TAB>sentence_b")
            pairs.append((fields[0].strip(), fields[1].strip()))
    return pairs

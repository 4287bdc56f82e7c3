import numpy as np
import torch
from torch.nn.utils.rnn import pad_sequence
from torch.utils.data import Dataset

from constants import MAX_SEQ_LEN, PAD_ID, VAL_FRACTION
from labels import LabelVector


class LabeledReportDataset(Dataset):
    """Encoded FINDINGS+IMPRESSION lemmas with the report's 14 label ids."""

    def __init__(self, reports, vocab, max_seq_len: int = MAX_SEQ_LEN):
        self.report_ids = []
        self.inputs = []
        self.labels = []
        for report in reports:
            gold = report.gold_labels()
            if gold is None:
                continue
            self.report_ids.append(report.report_id)
            self.inputs.append(torch.tensor(vocab.encode(report.body_lemmas(), max_seq_len), dtype=torch.long))
            self.labels.append(torch.tensor(LabelVector.parse(gold).to_ints(), dtype=torch.long))

    def __len__(self):
        return len(self.inputs)

    def __getitem__(self, idx):
        return self.inputs[idx], self.labels[idx]


def collate(batch):
    inputs, labels = zip(*batch)
    return pad_sequence(list(inputs), batch_first=True, padding_value=PAD_ID), torch.stack(labels)


def encode_batch(vocab, lemma_sequences, max_seq_len: int = MAX_SEQ_LEN) -> torch.Tensor:
    ids = [torch.tensor(vocab.encode(seq, max_seq_len), dtype=torch.long) for seq in lemma_sequences]
    return pad_sequence(ids, batch_first=True, padding_value=PAD_ID)


def deduplicate(reports) -> list:
    """Drop repeated report bodies within a patient, keeping the first."""
    seen, kept = set(), []
    for report in reports:
        key = (report.patient_id, tuple(report.body_lemmas()))
        if key in seen:
            continue
        seen.add(key)
        kept.append(report)
    return kept


def split_by_patient(reports, val_fraction: float = VAL_FRACTION, rng: np.random.Generator | None = None):
    """Patient-disjoint train/validation split after de-duplication."""
    rng = rng if rng is not None else np.random.default_rng(0)
    reports = deduplicate(reports)
    patients = sorted({r.patient_id for r in reports})
    if len(patients) < 2 or val_fraction <= 0:
        return reports, []
    n_val = min(len(patients) - 1, max(1, int(round(len(patients) * val_fraction))))
    val_patients = {patients[int(i)] for i in rng.permutation(len(patients))[:n_val]}
    train = [r for r in reports if r.patient_id not in val_patients]
    val = [r for r in reports if r.patient_id in val_patients]
    return train, val


def select_labeled(reports, n_labels: int | None, rng: np.random.Generator | None = None) -> list:
    """Seeded random subset of n_labels reports (all of them when n_labels is None)."""
    reports = list(reports)
    if n_labels is None or n_labels >= len(reports):
        return reports
    rng = rng if rng is not None else np.random.default_rng(0)
    picked = sorted(int(i) for i in rng.choice(len(reports), size=n_labels, replace=False))
    return [reports[i] for i in picked]

import copy
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from constants import (
    CLS_ID,
    DEFAULT_PRESET,
    DISEASE_OBSERVATIONS,
    ENCODER_PRESETS,
    MAX_SEQ_LEN,
    N_CLASSES,
    N_NO_FINDING_CLASSES,
    PAD_ID,
    RESERVED_TOKENS,
    UNK_ID,
)
from utils import ConfigError, DataError


class BatchTooSmall(ValueError):
    pass


@dataclass
class EncoderConfig:
    vocab_size: int
    max_seq_len: int = MAX_SEQ_LEN
    d_model: int = ENCODER_PRESETS[DEFAULT_PRESET][0]
    n_layers: int = ENCODER_PRESETS[DEFAULT_PRESET][1]
    n_heads: int = ENCODER_PRESETS[DEFAULT_PRESET][2]
    d_ff: int = ENCODER_PRESETS[DEFAULT_PRESET][3]
    proj_dim: int = ENCODER_PRESETS[DEFAULT_PRESET][4]
    dropout_p: float = 0.0
    projection_norm: str = "batchnorm"

    def __post_init__(self):
        for name in ("vocab_size", "max_seq_len", "d_model", "n_layers", "n_heads", "d_ff", "proj_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_seq_len < 2:
            raise ConfigError("max_seq_len must leave room for [CLS] and one token")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.projection_norm not in ("batchnorm", "layernorm"):
            raise ConfigError(f"projection_norm must be batchnorm or layernorm, got {self.projection_norm!r}")

    @classmethod
    def from_preset(cls, preset: str, vocab_size: int, **overrides) -> "EncoderConfig":
        if preset not in ENCODER_PRESETS:
            raise ConfigError(f"unknown encoder preset {preset!r}, expected one of {sorted(ENCODER_PRESETS)}")
        d_model, n_layers, n_heads, d_ff, proj_dim = ENCODER_PRESETS[preset]
        params = dict(d_model=d_model, n_layers=n_layers, n_heads=n_heads, d_ff=d_ff, proj_dim=proj_dim)
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(vocab_size=vocab_size, **params)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


class Vocabulary:
    """Lemma -> id map; ids 0-3 are reserved for [PAD], [CLS], [UNK] and the de-identification token."""

    def __init__(self, lemmas):
        self.itos = list(RESERVED_TOKENS) + [x for x in lemmas if x not in RESERVED_TOKENS]
        self.stoi = {}
        for i, lemma in enumerate(self.itos):
            if lemma in self.stoi:
                raise DataError(f"vocabulary lists {lemma!r} twice")
            self.stoi[lemma] = i

    @classmethod
    def build(cls, lemma_sequences, min_count: int = 1, max_size: Optional[int] = None) -> "Vocabulary":
        counts = Counter(lemma for seq in lemma_sequences for lemma in seq)
        ranked = sorted((x for x, c in counts.items() if c >= min_count), key=lambda x: (-counts[x], x))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(RESERVED_TOKENS))]
        return cls(ranked)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, lemma):
        return lemma in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, lemmas, max_seq_len: int = MAX_SEQ_LEN, keep: str = "tail") -> list[int]:
        ids = [self.stoi.get(lemma, UNK_ID) for lemma in lemmas]
        room = max_seq_len - 1
        if len(ids) > room:
            ids = ids[-room:] if keep == "tail" else ids[:room]
        return [CLS_ID] + ids

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_tsv(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            for i, lemma in enumerate(self.itos):
                f.write(f"{lemma}\t{i}\n")

    @classmethod
    def from_tsv(cls, path: str) -> "Vocabulary":
        rows = []
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    lemma, idx = line.rstrip("\n").split("\t")
                    rows.append((int(idx), lemma))
                except ValueError as e:
                    raise DataError(f"{path}:{line_no}: expected lemma<TAB>id") from e
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise DataError(f"{path}: ids must be 0..n-1 without gaps")
        lemmas = [lemma for _, lemma in rows]
        if lemmas[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise DataError(f"{path}: reserved tokens must occupy ids 0-{len(RESERVED_TOKENS) - 1}")
        return cls(lemmas[len(RESERVED_TOKENS) :])


class TransformerEncoderLayer(nn.Module):
    def __init__(
        self,
        d_model: int,
        nhead: int,
        dim_feedforward: int = 128,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(
            embed_dim=d_model, num_heads=nhead, dropout=dropout, batch_first=True
        )
        self.linear1 = nn.Linear(d_model, dim_feedforward)
        self.linear2 = nn.Linear(dim_feedforward, d_model)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        src: torch.Tensor,
        src_mask: Optional[torch.Tensor] = None,
        src_key_padding_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        src2 = self.norm1(src)
        attn_output, _ = self.self_attn(
            src2, src2, src2, attn_mask=src_mask, key_padding_mask=src_key_padding_mask, need_weights=False
        )
        src = src + self.dropout(attn_output)
        src2 = self.norm2(src)
        src = src + self.dropout(self.linear2(torch.relu(self.linear1(src2))))
        return src


class TransformerEncoder(nn.Module):
    """Pre-LN encoder over lemma ids; returns the final hidden state at [CLS]."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.token_embedding = nn.Embedding(config.vocab_size, config.d_model, padding_idx=PAD_ID)
        self.position_embedding = nn.Embedding(config.max_seq_len, config.d_model)
        layer = TransformerEncoderLayer(
            d_model=config.d_model,
            nhead=config.n_heads,
            dim_feedforward=config.d_ff,
            dropout=config.dropout_p,
        )
        self.layers = nn.ModuleList([copy.deepcopy(layer) for _ in range(config.n_layers)])
        self.norm = nn.LayerNorm(config.d_model)

    def forward(self, token_ids: torch.Tensor, padding_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        if padding_mask is None:
            padding_mask = token_ids.eq(PAD_ID)
        positions = torch.arange(token_ids.size(1), device=token_ids.device)
        x = self.token_embedding(token_ids) + self.position_embedding(positions).unsqueeze(0)
        for layer in self.layers:
            x = layer(x, src_key_padding_mask=padding_mask)
        return self.norm(x[:, 0])


class ProjectionHead(nn.Module):
    def __init__(self, d_model: int, proj_dim: int, norm: str = "batchnorm"):
        super().__init__()
        self.fc1 = nn.Linear(d_model, proj_dim)
        self.norm = nn.BatchNorm1d(proj_dim) if norm == "batchnorm" else nn.LayerNorm(proj_dim)
        self.fc2 = nn.Linear(proj_dim, proj_dim)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if self.training and isinstance(self.norm, nn.BatchNorm1d) and h.size(0) < 2:
            raise BatchTooSmall("batch-norm needs at least 2 rows in train mode")
        return F.normalize(self.fc2(F.relu(self.norm(self.fc1(h)))), dim=-1)


class ClassificationHeads(nn.Module):
    """13 four-way heads followed by the two-way No Finding head."""

    def __init__(self, d_model: int):
        super().__init__()
        self.heads = nn.ModuleList(
            [nn.Linear(d_model, N_CLASSES) for _ in DISEASE_OBSERVATIONS]
            + [nn.Linear(d_model, N_NO_FINDING_CLASSES)]
        )

    def forward(self, h: torch.Tensor) -> list[torch.Tensor]:
        return [head(h) for head in self.heads]


class ReportModel(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.encoder = TransformerEncoder(config)
        self.projection = ProjectionHead(config.d_model, config.proj_dim, config.projection_norm)
        self.heads = ClassificationHeads(config.d_model)

    def encode(self, token_ids: torch.Tensor) -> torch.Tensor:
        return self.encoder(token_ids)

    def project(self, token_ids: torch.Tensor) -> torch.Tensor:
        return self.projection(self.encoder(token_ids))

    def forward(self, token_ids: torch.Tensor) -> list[torch.Tensor]:
        return self.heads(self.encoder(token_ids))


def encode(model: ReportModel, token_ids: torch.Tensor) -> torch.Tensor:
    return model.encode(token_ids)


def project(model: ReportModel, cls_vector: torch.Tensor, train_mode: bool) -> torch.Tensor:
    was_training = model.projection.training
    model.projection.train(train_mode)
    try:
        return model.projection(cls_vector)
    finally:
        model.projection.train(was_training)


def count_parameters(model):
    return sum(p.numel() for p in model.parameters() if p.requires_grad)

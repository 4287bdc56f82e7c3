import copy
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
import torch
from torch.nn.utils import clip_grad_norm_ as clip
from torch.utils.data import DataLoader
from tqdm import tqdm

from augmentation import AugmentationPolicy, ContrastiveBatch, make_sampler
from constants import (
    ADAM_BETAS,
    ADAM_EPS,
    ALGORITHMS,
    AUG_PROBABILITY,
    DESK_FINETUNE_LR,
    DESK_PRETRAIN_BATCH_SIZE,
    DESK_PRETRAIN_EPOCHS,
    FINETUNE_BATCH_SIZE,
    FINETUNE_EPOCHS,
    FINETUNE_MODES,
    GRAD_CLIP,
    N_NEGATIVES,
    PAIR_KEYS,
    PRETRAIN_LR,
    TAU,
    VAL_FRACTION,
)
from datasets import LabeledReportDataset, collate, encode_batch, select_labeled, split_by_patient
from losses import NonFiniteError, batch_contrastive_loss, classification_loss_from_logits, split_views
from models import ReportModel, Vocabulary
from utils import ConfigError, DataError, NumericError, batch_rng, epoch_rng


class NonFiniteLoss(NumericError):
    def __init__(self, batch_id, message: str = "non-finite loss"):
        super().__init__(f"{message} at batch {batch_id}")
        self.batch_id = batch_id


@dataclass
class PretrainConfig:
    algorithm: str = "disease-factuality"
    tau: float = TAU
    k: int = N_NEGATIVES
    batch_size: int = DESK_PRETRAIN_BATCH_SIZE
    epochs: int = DESK_PRETRAIN_EPOCHS
    lr: float = PRETRAIN_LR
    momentum: float = 0.0
    seed: int = 0
    pair_key: str = "concept"
    aug_probability: float = AUG_PROBABILITY
    grad_clip: float | None = GRAD_CLIP
    printed_denominator: bool = False
    max_steps_per_epoch: int | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.pair_key not in PAIR_KEYS:
            raise ConfigError(f"pair_key must be one of {PAIR_KEYS}, got {self.pair_key!r}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1 for training, got {self.k}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FinetuneConfig:
    mode: str = "full"
    lr: float = DESK_FINETUNE_LR
    epochs: int = FINETUNE_EPOCHS
    batch_size: int = FINETUNE_BATCH_SIZE
    seed: int = 0
    val_fraction: float = VAL_FRACTION
    n_labels: int | None = None
    grad_clip: float | None = GRAD_CLIP

    def __post_init__(self):
        if self.mode not in FINETUNE_MODES:
            raise ConfigError(f"mode must be one of {FINETUNE_MODES}, got {self.mode!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.n_labels is not None and self.n_labels < 1:
            raise ConfigError(f"n_labels must be >= 1, got {self.n_labels}")

    def to_dict(self) -> dict:
        return asdict(self)


def make_optimizer(params, name: str, lr: float, momentum: float = 0.0):
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr, momentum=momentum)
    if name == "adam":
        return torch.optim.Adam(params, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)
    raise ConfigError(f"unknown optimizer {name!r}")


def contrastive_loss(model: ReportModel, batch: ContrastiveBatch, vocab: Vocabulary, tau: float = TAU,
                     printed_denominator: bool = False) -> torch.Tensor:
    ids = encode_batch(vocab, [v.lemmas for v in batch.views()], model.config.max_seq_len)
    z = model.project(ids)
    z_q, z_pos, z_negs = split_views(z, len(batch), batch.k)
    return batch_contrastive_loss(z_q, z_pos, z_negs, tau, printed_denominator)


def forward_backward(model: torch.nn.Module, loss_fn, batch_id=None):
    """Run loss_fn(model), backpropagate, and return (loss, {name: gradient})."""
    model.zero_grad(set_to_none=True)
    try:
        loss = loss_fn(model)
    except NonFiniteError as e:
        raise NonFiniteLoss(batch_id, str(e)) from e
    if not bool(torch.isfinite(loss)):
        raise NonFiniteLoss(batch_id)
    loss.backward()
    grads = {name: p.grad for name, p in model.named_parameters() if p.grad is not None}
    return loss.detach(), grads


def pretrain(
    model: ReportModel,
    vocab: Vocabulary,
    annotated_reports,
    config: PretrainConfig,
    verbose: bool = False,
):
    """Contrastive pre-training of encoder and projection head; returns (model, telemetry)."""
    sampler = make_sampler(config.algorithm, annotated_reports, config.k, config.pair_key)
    policy = AugmentationPolicy.default(seed=config.seed, probability=config.aug_probability)
    params = list(model.encoder.parameters()) + list(model.projection.parameters())
    optimizer = make_optimizer(params, "sgd", config.lr, config.momentum)

    anchors = sampler.anchors()
    n_batches = math.ceil(len(anchors) / config.batch_size)
    if config.max_steps_per_epoch is not None:
        n_batches = min(n_batches, config.max_steps_per_epoch)
    if verbose:
        print(
            f"[pretrain] algorithm={config.algorithm}, anchors={len(anchors)}, "
            f"batches/epoch={n_batches}, k={config.k}, tau={config.tau}"
        )

    rows = []
    model.train()
    for epoch in tqdm(range(config.epochs), desc="pretrain", disable=not verbose):
        start = time.time()
        order = epoch_rng(config.seed, epoch).permutation(len(anchors))
        losses = []
        for step in range(n_batches):
            anchor_ids = [anchors[int(i)] for i in order[step * config.batch_size : (step + 1) * config.batch_size]]
            batch = sampler.sample(anchor_ids, policy, batch_rng(config.seed, epoch, step))
            loss, _ = forward_backward(
                model, lambda m: contrastive_loss(m, batch, vocab, config.tau, config.printed_denominator), (epoch, step)
            )
            if config.grad_clip:
                clip(params, config.grad_clip)
            optimizer.step()
            losses.append(loss.item())
            rows.append({"epoch": epoch, "step": step, "loss": loss.item()})
        if verbose:
            print(f"[pretrain] Epoch {epoch + 1}/{config.epochs}, Loss: {np.mean(losses):.4f} ({time.time() - start:.2f}s)")
    model.eval()
    return model, pd.DataFrame(rows, columns=["epoch", "step", "loss"])


@torch.no_grad()
def dataset_loss(model: ReportModel, dataset: LabeledReportDataset, batch_size: int = FINETUNE_BATCH_SIZE) -> float:
    model.eval()
    total = 0.0
    for ids, labels in DataLoader(dataset, batch_size=batch_size, shuffle=False, collate_fn=collate):
        total += classification_loss_from_logits(model(ids), labels).item()
    return total / max(1, len(dataset))


def _set_encoder_trainable(model: ReportModel, trainable: bool):
    for module in (model.encoder, model.projection):
        for p in module.parameters():
            p.requires_grad_(trainable)


def finetune(
    model: ReportModel,
    vocab: Vocabulary,
    annotated_reports,
    config: FinetuneConfig,
    verbose: bool = False,
):
    """
    Supervised fine-tuning of the 14 heads (linear) or encoder + heads (full).
    The projection head is not used. The state with the lowest validation loss
    is restored at the end. Returns (model, history).
    """
    rng = np.random.default_rng(config.seed)
    train_reports, val_reports = split_by_patient(annotated_reports, config.val_fraction, rng)
    train_reports = select_labeled(train_reports, config.n_labels, rng)
    max_len = model.config.max_seq_len
    train_ds = LabeledReportDataset(train_reports, vocab, max_len)
    val_ds = LabeledReportDataset(val_reports, vocab, max_len)
    if len(train_ds) == 0:
        raise DataError("no labeled reports available for fine-tuning")

    linear = config.mode == "linear"
    _set_encoder_trainable(model, not linear)
    params = list(model.heads.parameters()) if linear else list(model.encoder.parameters()) + list(model.heads.parameters())
    optimizer = make_optimizer(params, "adam", config.lr)
    generator = torch.Generator().manual_seed(config.seed)
    loader = DataLoader(train_ds, batch_size=config.batch_size, shuffle=True, collate_fn=collate, generator=generator)

    if verbose:
        print(f"[finetune] mode={config.mode}, train={len(train_ds)}, val={len(val_ds)}, lr={config.lr}")

    best_model_info = {"epoch": -1, "state": None, "loss": float("inf")}
    rows = []
    for epoch in range(config.epochs):
        start = time.time()
        model.train()
        model.projection.eval()
        train_loss = 0.0
        for step, (ids, labels) in enumerate(loader):
            loss, _ = forward_backward(model, lambda m: classification_loss_from_logits(m(ids), labels), (epoch, step))
            if config.grad_clip:
                clip(params, config.grad_clip)
            optimizer.step()
            train_loss += loss.item()
        train_loss /= len(train_ds)
        val_loss = dataset_loss(model, val_ds, config.batch_size) if len(val_ds) else train_loss
        is_new_best = val_loss < best_model_info["loss"]
        if is_new_best:
            best_model_info = {"epoch": epoch, "state": copy.deepcopy(model.state_dict()), "loss": val_loss}
        rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if verbose:
            print(
                f"[finetune] Epoch {epoch + 1}/{config.epochs}, Train Loss: {train_loss:.4f}, "
                f"Val Loss: {val_loss:.4f} ({time.time() - start:.2f}s) {'*' if is_new_best else ''}"
            )

    if best_model_info["state"] is not None:
        model.load_state_dict(best_model_info["state"])
    _set_encoder_trainable(model, True)
    model.eval()
    return model, pd.DataFrame(rows, columns=["epoch", "train_loss", "val_loss"])

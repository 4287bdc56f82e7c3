import torch
import torch.nn.functional as F

from constants import LOG_CLAMP, TAU
from utils import NumericError


class ZeroVector(NumericError):
    pass


class NonFiniteError(NumericError):
    pass


def cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last dimension (broadcasting)."""
    norm_a = a.norm(dim=-1)
    norm_b = b.norm(dim=-1)
    if bool((norm_a == 0).any()) or bool((norm_b == 0).any()):
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return (a * b).sum(dim=-1) / (norm_a * norm_b)


def nt_xent(
    z_q: torch.Tensor,
    z_pos: torch.Tensor,
    z_negs: torch.Tensor,
    tau: float = TAU,
    printed_denominator: bool = False,
) -> torch.Tensor:
    """
    Normalized temperature-scaled cross-entropy for one query (z_q: (d,), z_negs: (k, d))
    or a batch of rows (z_q: (B, d), z_negs: (B, k, d)); returns one loss per row.

    With printed_denominator the positive term is left out of the denominator,
    which needs k >= 1 and can give negative losses.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    for name, t in (("query", z_q), ("positive", z_pos), ("negatives", z_negs)):
        if not bool(torch.isfinite(t).all()):
            raise NonFiniteError(f"non-finite values in {name} embeddings")

    pos = cosine_sim(z_q, z_pos) / tau
    k = z_negs.size(-2)
    if k > 0:
        neg = cosine_sim(z_q.unsqueeze(-2), z_negs) / tau
    else:
        neg = pos.new_zeros(pos.shape + (0,))

    if printed_denominator:
        if k == 0:
            raise ValueError("the negatives-only denominator needs at least one negative")
        logits = neg
    else:
        logits = torch.cat([pos.unsqueeze(-1), neg], dim=-1)

    shift = logits.max(dim=-1, keepdim=True).values.detach()
    log_denominator = shift.squeeze(-1) + torch.log(torch.exp(logits - shift).sum(dim=-1))
    loss = log_denominator - pos
    if not bool(torch.isfinite(loss).all()):
        raise NonFiniteError("non-finite contrastive loss")
    return loss


def batch_contrastive_loss(
    z_q: torch.Tensor,
    z_pos: torch.Tensor,
    z_negs: torch.Tensor,
    tau: float = TAU,
    printed_denominator: bool = False,
) -> torch.Tensor:
    """Sum of per-row NT-Xent over the mini-batch."""
    return nt_xent(z_q, z_pos, z_negs, tau, printed_denominator).sum()


def split_views(z: torch.Tensor, batch_size: int, k: int):
    """Undo ContrastiveBatch.views() ordering: queries, positives, then k negatives per row."""
    z_q = z[:batch_size]
    z_pos = z[batch_size : 2 * batch_size]
    z_negs = z[2 * batch_size :].reshape(batch_size, k, z.size(-1))
    return z_q, z_pos, z_negs


def classification_loss(probs: list[torch.Tensor], gold: torch.Tensor) -> torch.Tensor:
    """Sum over examples and heads of -log p(gold class); probs[h] is (B, C_h), gold is (B, 14)."""
    total = probs[0].new_zeros(())
    for h, p in enumerate(probs):
        picked = p.gather(1, gold[:, h : h + 1]).squeeze(1)
        total = total - torch.log(picked.clamp_min(LOG_CLAMP)).sum()
    return total


def classification_loss_from_logits(logits: list[torch.Tensor], gold: torch.Tensor) -> torch.Tensor:
    return sum(F.cross_entropy(l, gold[:, h], reduction="sum") for h, l in enumerate(logits))

import torch

from checkpoint import load_checkpoint
from constants import DEFAULT_FACTUALITY, DEFAULT_LEXICON, DEFAULT_PRESET, DEFAULT_RULES
from info_preservation import InfoPreservationModule
from models import EncoderConfig, ReportModel, Vocabulary
from utils import set_random_seeds


def init_module(lexicon: str = None, factuality: str = None, rules: str = None) -> InfoPreservationModule:
    return InfoPreservationModule.load(
        lexicon or DEFAULT_LEXICON,
        factuality or DEFAULT_FACTUALITY,
        rules or DEFAULT_RULES,
    )


def init_vocabulary(annotated_reports, min_count: int = 1, max_size: int = None) -> Vocabulary:
    return Vocabulary.build(
        (s.lemmas for r in annotated_reports for s in r.sentences), min_count=min_count, max_size=max_size
    )


def init_encoder_config(preset: str, vocab_size: int, **overrides) -> EncoderConfig:
    return EncoderConfig.from_preset(preset or DEFAULT_PRESET, vocab_size, **overrides)


def init_model(config: EncoderConfig, seed: int = 0) -> ReportModel:
    set_random_seeds(seed)
    return ReportModel(config)


def init_from_checkpoint_or_scratch(
    checkpoint: str | None,
    annotated_reports,
    preset: str = DEFAULT_PRESET,
    seed: int = 0,
    **overrides,
):
    """(model, vocab, metadata) from a checkpoint, or a fresh model over the corpus vocabulary."""
    if checkpoint:
        return load_checkpoint(checkpoint)
    vocab = init_vocabulary(annotated_reports)
    model = init_model(init_encoder_config(preset, len(vocab), **overrides), seed)
    return model, vocab, {"stage": "init"}


def reset_heads(model: ReportModel, seed: int = 0):
    """Fresh classification heads over a kept encoder."""
    torch.manual_seed(seed)
    for head in model.heads.heads:
        head.reset_parameters()

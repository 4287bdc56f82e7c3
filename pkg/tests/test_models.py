import pytest
import torch

from constants import CLS_ID, N_CLASSES, PAD_ID, RESERVED_TOKENS, UNK_ID
from datasets import encode_batch
from initialization import init_model
from models import BatchTooSmall, EncoderConfig, ReportModel, Vocabulary, project
from utils import ConfigError, DataError


@pytest.fixture
def model(tiny_config):
    return init_model(tiny_config, seed=0)


def _batch(vocab, texts, max_seq_len=48):
    return encode_batch(vocab, [t.split() for t in texts], max_seq_len)


class TestEncoderConfig:
    def test_preset_overrides(self):
        config = EncoderConfig.from_preset("small", 100, max_seq_len=64)
        assert (config.d_model, config.n_heads, config.max_seq_len) == (32, 4, 64)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            EncoderConfig.from_preset("huge", 100)

    def test_heads_divide_width(self):
        with pytest.raises(ConfigError):
            EncoderConfig(vocab_size=10, d_model=10, n_heads=3)

    def test_dict_roundtrip(self, tiny_config):
        assert EncoderConfig.from_dict(tiny_config.to_dict()) == tiny_config


class TestVocabulary:
    def test_reserved_ids(self):
        vocab = Vocabulary(["lung", "clear"])
        assert vocab.itos[: len(RESERVED_TOKENS)] == RESERVED_TOKENS
        assert vocab.encode(["lung", "xyz"]) == [CLS_ID, vocab.stoi["lung"], UNK_ID]

    def test_build_orders_by_count(self):
        vocab = Vocabulary.build([["b", "a", "a"], ["c", "a", "b"]])
        assert vocab.itos[len(RESERVED_TOKENS) :] == ["a", "b", "c"]

    def test_tail_truncation(self):
        vocab = Vocabulary(list("abcdef"))
        ids = vocab.encode(list("abcdef"), max_seq_len=4)
        assert ids == [CLS_ID] + [vocab.stoi[x] for x in "def"]
        head = vocab.encode(list("abcdef"), max_seq_len=4, keep="head")
        assert head == [CLS_ID] + [vocab.stoi[x] for x in "abc"]

    def test_tsv_roundtrip(self, tmp_path, synthetic_vocab):
        path = str(tmp_path / "vocab.tsv")
        synthetic_vocab.to_tsv(path)
        assert Vocabulary.from_tsv(path) == synthetic_vocab

    def test_tsv_gap(self, tmp_path):
        path = tmp_path / "vocab.tsv"
        path.write_text("".join(f"{t}\t{i}\n" for i, t in enumerate(RESERVED_TOKENS)) + "lung\t7\n")
        with pytest.raises(DataError):
            Vocabulary.from_tsv(str(path))


class TestReportModel:
    def test_shapes_and_finite(self, model, synthetic_vocab, tiny_config):
        x = _batch(synthetic_vocab, ["lung be clear .", "there be a small effusion .", "no pneumothorax ."])
        model.train()
        h = model.encode(x)
        z = model.project(x)
        logits = model(x)
        assert h.shape == (3, tiny_config.d_model)
        assert z.shape == (3, tiny_config.proj_dim)
        assert len(logits) == 14
        assert all(l.shape == (3, N_CLASSES) for l in logits[:13])
        assert logits[13].shape == (3, 2)
        assert all(bool(torch.isfinite(t).all()) for t in [h, z] + logits)

    def test_projection_is_unit_norm(self, model, synthetic_vocab):
        x = _batch(synthetic_vocab, ["lung be clear .", "heart size be normal ."])
        z = model.project(x)
        assert torch.allclose(z.norm(dim=-1), torch.ones(2), atol=1e-5)

    def test_padding_does_not_change_cls(self, model, synthetic_vocab):
        model.eval()
        short = torch.tensor([synthetic_vocab.encode("lung be clear".split())])
        padded = torch.cat([short, torch.full((1, 5), PAD_ID)], dim=1)
        with torch.no_grad():
            assert torch.allclose(model.encode(short), model.encode(padded), atol=1e-5)

    def test_batchnorm_needs_two_rows(self, model, synthetic_vocab):
        x = _batch(synthetic_vocab, ["lung be clear ."])
        model.train()
        with pytest.raises(BatchTooSmall):
            model.project(x)
        cls = model.encode(x)
        assert project(model, cls, train_mode=False).shape == (1, model.config.proj_dim)
        assert model.projection.training

    def test_gradients_reach_every_parameter(self, tiny_config, synthetic_vocab):
        model = init_model(tiny_config, seed=1).double()
        x = _batch(synthetic_vocab, ["lung be clear .", "there be a small effusion .", "mild edema ."])
        loss = model.project(x).sum() + sum(l.sum() for l in model(x))
        loss.backward()
        for name, p in model.named_parameters():
            assert p.grad is not None, name
            assert bool(torch.isfinite(p.grad).all()), name

    def test_zero_lr_leaves_parameters(self, model, synthetic_vocab):
        before = {k: v.clone() for k, v in model.state_dict().items() if v.dtype.is_floating_point}
        optimizer = torch.optim.SGD(model.parameters(), lr=0.0)
        x = _batch(synthetic_vocab, ["lung be clear .", "mild edema ."])
        model.train()
        model.project(x).sum().backward()
        optimizer.step()
        after = model.state_dict()
        # batch-norm running statistics move on any train-mode forward pass
        for name, value in before.items():
            if "running" in name:
                continue
            assert torch.equal(value, after[name]), name

    def test_seeded_init_is_reproducible(self, tiny_config):
        a, b = init_model(tiny_config, seed=5), init_model(tiny_config, seed=5)
        for (name, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
            assert torch.equal(x, y), name

    def test_model_from_config(self, tiny_config):
        assert isinstance(ReportModel(tiny_config).heads.heads, torch.nn.ModuleList)

import copy

import numpy as np
import pytest
import torch

from augmentation import AugmentationPolicy, DiseaseFactualityPairSampler, InsufficientData
from corpus import parse_report
from datasets import LabeledReportDataset, collate, encode_batch
from info_preservation import annotate_report
from initialization import init_model
from losses import classification_loss_from_logits
from training import (
    FinetuneConfig,
    NonFiniteLoss,
    PretrainConfig,
    contrastive_loss,
    finetune,
    forward_backward,
    make_optimizer,
    pretrain,
)
from utils import ConfigError


def _state(model):
    return {k: v.clone() for k, v in model.state_dict().items()}


def _same(a, b, prefix=""):
    return all(torch.equal(a[k], b[k]) for k in a if k.startswith(prefix))


class TestConfigs:
    @pytest.mark.parametrize(
        "overrides",
        [{"algorithm": "random"}, {"tau": 0.0}, {"k": 0}, {"batch_size": 0}, {"epochs": -1}, {"pair_key": "word"}],
    )
    def test_pretrain_validation(self, overrides):
        with pytest.raises(ConfigError):
            PretrainConfig(**overrides)

    @pytest.mark.parametrize("overrides", [{"mode": "frozen"}, {"val_fraction": 1.0}, {"n_labels": 0}])
    def test_finetune_validation(self, overrides):
        with pytest.raises(ConfigError):
            FinetuneConfig(**overrides)


class TestPretrain:
    def test_zero_epochs_leaves_parameters(self, tiny_config, synthetic_vocab, synthetic_annotated):
        model = init_model(tiny_config, seed=0)
        before = _state(model)
        model, telemetry = pretrain(model, synthetic_vocab, synthetic_annotated, PretrainConfig(epochs=0, k=2))
        assert telemetry.empty
        assert _same(before, model.state_dict())

    @pytest.mark.parametrize("algorithm", ["patient", "disease", "disease-factuality"])
    def test_short_run(self, algorithm, tiny_config, synthetic_vocab, synthetic_annotated):
        model = init_model(tiny_config, seed=0)
        heads_before = _state(model)
        config = PretrainConfig(algorithm=algorithm, epochs=1, k=2, batch_size=8, max_steps_per_epoch=3, seed=1)
        model, telemetry = pretrain(model, synthetic_vocab, synthetic_annotated, config)
        assert list(telemetry.columns) == ["epoch", "step", "loss"]
        assert 1 <= len(telemetry) <= 3
        assert np.isfinite(telemetry["loss"]).all()
        assert (telemetry["loss"] >= 0).all()
        assert _same(heads_before, model.state_dict(), prefix="heads.")
        assert not _same(heads_before, model.state_dict(), prefix="encoder.")

    def test_seeded_runs_agree(self, tiny_config, synthetic_vocab, synthetic_annotated):
        config = PretrainConfig(algorithm="disease", epochs=1, k=2, batch_size=8, max_steps_per_epoch=2, seed=4)
        _, a = pretrain(init_model(tiny_config, seed=0), synthetic_vocab, synthetic_annotated, config)
        _, b = pretrain(init_model(tiny_config, seed=0), synthetic_vocab, synthetic_annotated, config)
        assert np.allclose(a["loss"], b["loss"])

    def test_patient_algorithm_needs_repeat_patients(self, module, tiny_config, synthetic_vocab):
        reports = [
            annotate_report(parse_report("There is a small left pleural effusion.", f"r{i}", f"p{i}"), module)
            for i in range(6)
        ]
        with pytest.raises(InsufficientData):
            pretrain(init_model(tiny_config), synthetic_vocab, reports, PretrainConfig(algorithm="patient", k=2, epochs=1))

    @pytest.mark.slow
    def test_loss_decreases(self, tiny_config, synthetic_vocab, synthetic_annotated):
        config = PretrainConfig(algorithm="disease-factuality", epochs=15, k=4, batch_size=16, seed=0)
        _, telemetry = pretrain(init_model(tiny_config, seed=0), synthetic_vocab, synthetic_annotated, config)
        per_epoch = telemetry.groupby("epoch")["loss"].mean()
        assert per_epoch.iloc[-3:].mean() < per_epoch.iloc[:3].mean()


class TestFinetune:
    def test_linear_freezes_encoder(self, tiny_config, synthetic_vocab, synthetic_annotated):
        model = init_model(tiny_config, seed=0)
        before = _state(model)
        model, history = finetune(model, synthetic_vocab, synthetic_annotated, FinetuneConfig(mode="linear", epochs=2))
        after = model.state_dict()
        assert _same(before, after, prefix="encoder.")
        assert _same(before, after, prefix="projection.")
        assert not _same(before, after, prefix="heads.")
        assert all(p.requires_grad for p in model.parameters())
        assert list(history.columns) == ["epoch", "train_loss", "val_loss"]

    def test_full_updates_encoder(self, tiny_config, synthetic_vocab, synthetic_annotated):
        model = init_model(tiny_config, seed=0)
        before = _state(model)
        model, history = finetune(model, synthetic_vocab, synthetic_annotated, FinetuneConfig(mode="full", epochs=1))
        assert not _same(before, model.state_dict(), prefix="encoder.")
        assert _same(before, model.state_dict(), prefix="projection.")
        assert len(history) == 1
        assert np.isfinite(history[["train_loss", "val_loss"]].to_numpy()).all()

    def test_zero_epochs(self, tiny_config, synthetic_vocab, synthetic_annotated):
        model = init_model(tiny_config, seed=0)
        before = _state(model)
        model, history = finetune(model, synthetic_vocab, synthetic_annotated, FinetuneConfig(epochs=0))
        assert history.empty
        assert _same(before, model.state_dict())

    def test_n_labels_subset_is_reproducible(self, tiny_config, synthetic_vocab, synthetic_annotated):
        config = FinetuneConfig(mode="linear", epochs=1, n_labels=10, seed=3)
        a, _ = finetune(init_model(tiny_config, seed=0), synthetic_vocab, synthetic_annotated, config)
        b, _ = finetune(init_model(tiny_config, seed=0), synthetic_vocab, synthetic_annotated, copy.copy(config))
        assert _same(a.state_dict(), b.state_dict())


class TestForwardBackward:
    @staticmethod
    def _check_finite_differences(model, loss_fn, prefixes, eps=1e-6):
        _, grads = forward_backward(model, loss_fn)
        grads = {name: g.clone() for name, g in grads.items()}
        params = dict(model.named_parameters())
        checked = [name for name in params if name.startswith(prefixes)]
        assert checked and set(checked) <= set(grads)
        rng = np.random.default_rng(0)
        for name in checked:
            p, grad = params[name], grads[name]
            flat_max = int(grad.abs().argmax())
            entries = [tuple(int(i) for i in np.unravel_index(flat_max, p.shape))]
            entries += [tuple(int(rng.integers(n)) for n in p.shape) for _ in range(2)]
            for idx in entries:
                original = p[idx].item()
                with torch.no_grad():
                    p[idx] = original + eps
                up = loss_fn(model).item()
                with torch.no_grad():
                    p[idx] = original - eps
                down = loss_fn(model).item()
                with torch.no_grad():
                    p[idx] = original
                numeric = (up - down) / (2 * eps)
                assert grad[idx].item() == pytest.approx(numeric, rel=1e-4, abs=1e-7), (name, idx)
        return checked

    def test_contrastive_loss_matches_finite_differences(self, tiny_config, synthetic_vocab, synthetic_annotated):
        model = init_model(tiny_config, seed=0).double()
        model.eval()
        sampler = DiseaseFactualityPairSampler(synthetic_annotated, k=2)
        batch = sampler.sample(sampler.anchors()[:3], AugmentationPolicy.zero(), np.random.default_rng(0))
        checked = self._check_finite_differences(
            model, lambda m: contrastive_loss(m, batch, synthetic_vocab, tau=0.4), ("encoder.", "projection.")
        )
        assert {name.split(".")[0] for name in checked} == {"encoder", "projection"}
        assert len(checked) == len(list(model.encoder.parameters())) + len(list(model.projection.parameters()))

    def test_classification_loss_matches_finite_differences(self, tiny_config, synthetic_vocab, synthetic_annotated):
        model = init_model(tiny_config, seed=0).double()
        model.eval()
        dataset = LabeledReportDataset(synthetic_annotated[:4], synthetic_vocab, tiny_config.max_seq_len)
        ids, labels = collate([dataset[i] for i in range(len(dataset))])
        checked = self._check_finite_differences(
            model, lambda m: classification_loss_from_logits(m(ids), labels), ("encoder.", "heads.")
        )
        assert len(checked) == len(list(model.encoder.parameters())) + len(list(model.heads.parameters()))

    def test_non_finite_loss_names_batch(self, tiny_config):
        model = init_model(tiny_config)
        with pytest.raises(NonFiniteLoss) as info:
            forward_backward(model, lambda m: torch.tensor(float("nan"), requires_grad=True), batch_id=(2, 5))
        assert info.value.batch_id == (2, 5)

    def test_duplicated_rows_double_the_loss(self, tiny_config, synthetic_vocab):
        model = init_model(tiny_config, seed=0)
        model.eval()
        rows = [["lung", "be", "clear"], ["mild", "edema"]]
        single, _ = forward_backward(model, lambda m: sum(l.sum() for l in m(encode_batch(synthetic_vocab, rows))))
        double, _ = forward_backward(model, lambda m: sum(l.sum() for l in m(encode_batch(synthetic_vocab, rows * 2))))
        assert float(double) == pytest.approx(2 * float(single), rel=1e-5)


class TestOptimizers:
    def test_sgd_step(self):
        p = torch.nn.Parameter(torch.tensor([1.0, -2.0]))
        p.grad = torch.tensor([0.5, 1.0])
        make_optimizer([p], "sgd", lr=0.1).step()
        assert torch.allclose(p.detach(), torch.tensor([0.95, -2.1]))

    def test_adam_first_step(self):
        p = torch.nn.Parameter(torch.tensor([1.0, -2.0, 3.0]))
        p.grad = torch.tensor([0.5, -4.0, 1e-3])
        make_optimizer([p], "adam", lr=1e-3).step()
        # bias-corrected first step moves each coordinate by about lr in the gradient's direction
        assert torch.allclose(p.detach(), torch.tensor([1.0 - 1e-3, -2.0 + 1e-3, 3.0 - 1e-3]), atol=1e-5)

    @pytest.mark.parametrize("name", ["sgd", "adam"])
    def test_zero_gradient(self, name):
        p = torch.nn.Parameter(torch.tensor([1.0, -2.0]))
        p.grad = torch.zeros(2)
        make_optimizer([p], name, lr=0.1).step()
        assert torch.equal(p.detach(), torch.tensor([1.0, -2.0]))

    def test_unknown(self):
        with pytest.raises(ConfigError):
            make_optimizer([torch.nn.Parameter(torch.zeros(1))], "lbfgs", lr=0.1)

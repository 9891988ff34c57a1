"""Tests for noise injection, the NLL objective, fitting and gradient checks."""
import math

import numpy as np
import pytest
import torch

from trajflow.data import AugmentConfig
from trajflow.errors import InvalidInputError, NumericError
from trajflow.flows import FlowConfig, FlowModel
from trajflow.synthetic import GaussianMixture2D, mixture_windows
from trajflow.training import (
    NoiseConfig,
    TrainConfig,
    fit,
    grad_check,
    inject_noise,
    nll_loss,
    snapshot,
    unscale,
    windows_to_tensors,
)

from test_flows import TOY, force_identity, make_model


class TestInjectNoise:
    def test_noop_configuration(self, rng, torch_gen):
        x = torch.as_tensor(rng.normal(size=(5, 8)))
        out = inject_noise(x, NoiseConfig(alpha=1.0), torch_gen)
        assert torch.equal(out, x)

    def test_monte_carlo_stds(self, torch_gen):
        n = 100_000
        x = torch.zeros(n, 4, dtype=torch.float64)
        x[:, 2:] = 1.5
        cfg = NoiseConfig(alpha=10.0, beta=0.2, gamma=0.02)
        out = inject_noise(x, cfg, torch_gen)
        residual = out - cfg.alpha * x
        std_zero = residual[:, :2].std().item()
        std_nonzero = residual[:, 2:].std().item()
        assert std_zero == pytest.approx(0.2, rel=0.02)
        assert std_nonzero == pytest.approx(0.02, rel=0.02)

    def test_invalid_config_rejected(self):
        with pytest.raises(InvalidInputError):
            NoiseConfig(alpha=0.0)
        with pytest.raises(InvalidInputError):
            NoiseConfig(beta=-0.1)


class TestUnscale:
    def test_identity_at_one(self, rng):
        z = torch.as_tensor(rng.normal(size=6))
        assert torch.equal(unscale(z, 1.0), z)

    def test_tens_to_ones(self):
        z = torch.full((4,), 10.0, dtype=torch.float64)
        assert torch.equal(unscale(z, 10.0), torch.ones(4, dtype=torch.float64))

    def test_round_trip(self, rng):
        v = torch.as_tensor(rng.normal(size=12))
        assert float((unscale(7.3 * v, 7.3) - v).abs().max()) < 1e-12


class TestNllLoss:
    def test_batch_mean_equals_mean_of_singles(self, rng):
        model = make_model()
        x = torch.as_tensor(rng.uniform(-3, 3, size=(6, 4)))
        c = torch.as_tensor(rng.normal(size=(6, TOY.cond_dim)))
        with torch.no_grad():
            full = float(nll_loss(x, c, model))
            singles = [
                float(nll_loss(x[i : i + 1], c[i : i + 1], model)) for i in range(6)
            ]
        assert full == pytest.approx(np.mean(singles), rel=1e-12)

    def test_identity_flow_at_origin(self):
        config = FlowConfig(dim=24, n_layers=2, cond_dim=4,
                            conditioner_hidden=8, conditioner_depth=1)
        model = force_identity(FlowModel(config, seed=0))
        x = torch.zeros(3, 24, dtype=torch.float64)
        c = torch.zeros(3, 4, dtype=torch.float64)
        with torch.no_grad():
            loss = float(nll_loss(x, c, model))
        assert loss == pytest.approx(12.0 * math.log(2.0 * math.pi), abs=1e-12)

    def test_non_finite_sample_reported_with_index(self, rng):
        model = make_model()
        x = torch.as_tensor(rng.uniform(-3, 3, size=(4, 4)))
        x[2, 1] = 1e200
        c = torch.as_tensor(rng.normal(size=(4, TOY.cond_dim)))
        with pytest.raises(NumericError, match="sample 2"):
            nll_loss(x, c, model)


def small_mixture_setup(seed=0, n=256):
    rng = np.random.default_rng(seed)
    mixture = GaussianMixture2D()
    windows = mixture_windows(mixture, n, rng)
    train, val = windows[: n - 64], windows[n - 64 :]
    config = FlowConfig(dim=2, n_layers=4, k_bins=6, support_b=6.0,
                        cond_dim=16, conditioner_hidden=16, conditioner_depth=2)
    model = FlowModel(config, seed=seed)
    return train, val, model


class TestFit:
    def test_zero_learning_rate_keeps_parameters(self):
        train, val, model = small_mixture_setup()
        before = snapshot(model)
        fit(train, val, model, TrainConfig(learning_rate=0.0, epochs=1, batch_size=64),
            NoiseConfig())
        after = snapshot(model)
        assert all(torch.equal(before[k], after[k]) for k in before)

    def test_fixed_seed_reproduces_history(self):
        histories = []
        for _ in range(2):
            train, val, model = small_mixture_setup()
            result = fit(
                train, val, model,
                TrainConfig(learning_rate=1e-3, epochs=3, batch_size=64, seed=11),
                NoiseConfig(),
            )
            histories.append(result.history)
        assert histories[0] == histories[1]

    def test_loss_decreases_on_toy_mixture(self):
        train, val, model = small_mixture_setup(n=512)
        result = fit(
            train, val, model,
            TrainConfig(learning_rate=3e-3, epochs=10, batch_size=128, seed=2),
            NoiseConfig(),
        )
        losses = [row[1] for row in result.history]
        assert losses[-1] < losses[0]
        for prev, cur in zip(losses, losses[1:]):
            assert cur <= prev * 1.05

    def test_best_state_tracks_validation(self):
        train, val, model = small_mixture_setup(n=256)
        result = fit(
            train, val, model,
            TrainConfig(learning_rate=3e-3, epochs=4, batch_size=128, seed=3),
            NoiseConfig(),
        )
        vals = [row[2] for row in result.history]
        assert result.best_epoch == int(np.argmin(vals))

    def test_empty_dataset_rejected(self):
        train, val, model = small_mixture_setup()
        with pytest.raises(InvalidInputError):
            fit([], val, model, TrainConfig(epochs=1), NoiseConfig())

    def test_augmented_run_differs_but_is_deterministic(self):
        results = []
        for _ in range(2):
            train, val, model = small_mixture_setup()
            result = fit(
                train, val, model,
                TrainConfig(learning_rate=1e-3, epochs=2, batch_size=64, seed=5),
                NoiseConfig(),
                augment_cfg=AugmentConfig(mu=1.0, sigma=0.3, s_min=0.5, s_max=1.5),
            )
            results.append(result.history)
        assert results[0] == results[1]


class TestGradCheck:
    def test_untouched_parameters_have_zero_gradients(self, rng):
        # Zero conditioner output layers cut the chain to the hidden layers
        # and the encoder, so their analytic gradients vanish exactly.
        model = force_identity(make_model())
        obs = torch.as_tensor(rng.normal(size=(3, 4, 2)))
        fut = torch.as_tensor(rng.uniform(-3, 3, size=(3, 4)))
        loss = nll_loss(fut, model.encode(obs), model)
        loss.backward()
        for name, p in model.named_parameters():
            if "weights.2" in name or "biases.2" in name:
                continue
            if p.grad is not None:
                assert float(p.grad.abs().max()) == 0.0, name

    def test_gradients_match_finite_differences_sampled(self, rng):
        model = make_model(seed=9)
        obs = torch.as_tensor(rng.normal(size=(4, 4, 2)))
        fut = torch.as_tensor(rng.uniform(-3, 3, size=(4, 4)))
        report = grad_check(model, obs, fut, limit_per_group=6)
        assert report.passed, report.max_rel_error

    def test_duplicated_batch_keeps_gradient(self, rng):
        model = make_model(seed=4)
        obs = torch.as_tensor(rng.normal(size=(3, 4, 2)))
        fut = torch.as_tensor(rng.uniform(-3, 3, size=(3, 4)))

        def gradient(o, f):
            model.zero_grad(set_to_none=True)
            nll_loss(f, model.encode(o), model).backward()
            return torch.cat([p.grad.reshape(-1) for p in model.parameters()
                              if p.grad is not None])

        single = gradient(obs, fut)
        doubled = gradient(obs.repeat(2, 1, 1), fut.repeat(2, 1))
        assert float((single - doubled).abs().max()) < 1e-12


class TestWindowsToTensors:
    def test_shapes(self, rng):
        windows = mixture_windows(GaussianMixture2D(), 5, rng)
        obs, fut = windows_to_tensors(windows)
        assert obs.shape == (5, 2, 2)
        assert fut.shape == (5, 2)

    def test_mismatched_lengths_rejected(self, rng):
        windows = mixture_windows(GaussianMixture2D(), 3, rng)
        windows += mixture_windows(GaussianMixture2D(), 1, rng, t_obs=5)
        with pytest.raises(InvalidInputError):
            windows_to_tensors(windows)

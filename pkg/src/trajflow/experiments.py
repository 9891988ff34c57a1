"""Controlled studies on synthetic data: density recovery, noise-injection
stability, likelihood ranking and the scale-augmentation ablation.

Each study trains small models end to end through `fit`, so results are
deterministic given the seed. The functions return plain result objects;
the scripts under scripts/ and the acceptance suite format or assert on
them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from trajflow.data import AugmentConfig, rotation_normalize, window_trajectories
from trajflow.flows import FlowConfig, FlowModel
from trajflow.metrics import PredictionSet, predict
from trajflow.synthetic import (
    GaussianMixture2D,
    constant_velocity_tracks,
    mixture_windows,
    speed_diverse_tracks,
    three_mode_tracks,
)
from trajflow.training import FitResult, NoiseConfig, TrainConfig, fit

MIXTURE_FLOW = FlowConfig(
    dim=2, n_layers=6, k_bins=8, support_b=6.0,
    cond_dim=16, conditioner_hidden=32, conditioner_depth=2,
)


def train_mixture_density(
    seed: int = 0,
    n_train: int = 8000,
    epochs: int = 60,
    learning_rate: float = 3e-3,
    mixture: GaussianMixture2D | None = None,
) -> tuple[FlowModel, GaussianMixture2D, FitResult]:
    """Fit an unconditional 2-d flow to the two-component mixture (no noise)."""
    mixture = mixture or GaussianMixture2D()
    rng = np.random.default_rng(seed)
    windows = mixture_windows(mixture, n_train, rng)
    train_set, val_set = windows[: -n_train // 10], windows[-n_train // 10 :]
    model = FlowModel(MIXTURE_FLOW, seed=seed)
    result = fit(
        train_set, val_set, model,
        TrainConfig(
            learning_rate=learning_rate, batch_size=256, epochs=epochs, seed=seed
        ),
        NoiseConfig(),
    )
    return model, mixture, result


def constant_conditioning(model: FlowModel, t_obs: int = 3) -> torch.Tensor:
    """Conditioning vector of the all-zero observation used by mixture windows."""
    zeros = torch.zeros(1, t_obs - 1, 2, dtype=torch.float64)
    with torch.no_grad():
        return model.encode(zeros).squeeze(0)


def density_quadrature(
    model: FlowModel,
    cond: torch.Tensor,
    lo: float = -8.0,
    hi: float = 8.0,
    n_points: int = 801,
    chunk: int = 65536,
) -> float:
    """Trapezoid quadrature of exp(log_prob) over [lo, hi]^2."""
    grid = torch.linspace(lo, hi, n_points, dtype=torch.float64)
    xx, yy = torch.meshgrid(grid, grid, indexing="ij")
    pts = torch.stack([xx.reshape(-1), yy.reshape(-1)], dim=-1)
    dens = np.empty(len(pts))
    with torch.no_grad():
        for start in range(0, len(pts), chunk):
            block = pts[start : start + chunk]
            lp = model.log_prob(block, cond.expand(len(block), -1))
            dens[start : start + len(block)] = lp.exp().numpy()
    step = float(grid[1] - grid[0])
    surface = dens.reshape(n_points, n_points)
    return float(np.trapezoid(np.trapezoid(surface, dx=step, axis=1), dx=step))


def mixture_test_nll(
    model: FlowModel,
    mixture: GaussianMixture2D,
    n_test: int = 20000,
    seed: int = 777,
) -> float:
    """Mean NLL of held-out mixture draws under the trained flow."""
    rng = np.random.default_rng(seed)
    samples = torch.as_tensor(mixture.sample(n_test, rng))
    cond = constant_conditioning(model)
    with torch.no_grad():
        lp = model.log_prob(samples, cond.expand(n_test, -1))
    return float(-lp.mean())


@dataclass
class StabilityStudy:
    injected: FitResult
    plain: FitResult
    injected_val_std: float
    plain_val_std: float
    injected_best_nll: float
    plain_best_nll: float


def _val_series(result: FitResult) -> np.ndarray:
    return np.array([row[2] for row in result.history])


def noise_stability_study(
    seed: int = 0,
    n_tracks: int = 60,
    epochs: int = 60,
    tail: int = 50,
    noise: NoiseConfig = NoiseConfig(alpha=10.0, beta=0.2, gamma=0.02),
) -> StabilityStudy:
    """Identical training runs on manifold-heavy data, with and without noise.

    Constant-velocity tracks have exactly-zero lateral displacements and
    exactly-repeated longitudinal ones, so the plain run chases unbounded
    likelihood spikes while the injected run settles. Statistics are taken
    over the last `tail` epochs of the validation NLL. Speeds stay below
    support_b / alpha so the scaled displacements remain inside the spline
    support.
    """
    config = FlowConfig(
        dim=24, n_layers=5, k_bins=8, support_b=15.0,
        cond_dim=16, conditioner_hidden=32, conditioner_depth=2,
    )
    train_cfg = TrainConfig(learning_rate=1e-3, batch_size=128, epochs=epochs, seed=seed)

    results = {}
    for label, noise_cfg in (("injected", noise), ("plain", NoiseConfig())):
        rng = np.random.default_rng(seed)
        tracks = constant_velocity_tracks(
            n_tracks, length=30, rng=rng, speed_range=(0.2, 1.2)
        )
        windows = [
            rotation_normalize(w) for w in window_trajectories(tracks, 8, 12, step=1)
        ]
        split = max(1, len(windows) // 10)
        train_set, val_set = windows[:-split], windows[-split:]
        model = FlowModel(config, seed=seed)
        results[label] = fit(train_set, val_set, model, train_cfg, noise_cfg)

    inj, pl = results["injected"], results["plain"]
    inj_vals, pl_vals = _val_series(inj), _val_series(pl)
    return StabilityStudy(
        injected=inj,
        plain=pl,
        injected_val_std=float(inj_vals[-tail:].std()),
        plain_val_std=float(pl_vals[-tail:].std()),
        injected_best_nll=float(inj_vals.min()),
        plain_best_nll=float(pl_vals.min()),
    )


@dataclass
class RankStudy:
    prediction_sets: list[PredictionSet]
    rank_ade: np.ndarray  # (n_samples, n_windows) ADE of each rank per window


def rank_study(
    seed: int = 0,
    n_train_tracks: int = 1500,
    n_eval_windows: int = 500,
    n_samples: int = 20,
    epochs: int = 40,
) -> RankStudy:
    """Train on the three-mode branching task and rank samples by likelihood."""
    t_obs, t_pred = 8, 8
    config = FlowConfig(
        dim=2 * t_pred, n_layers=5, k_bins=8, support_b=15.0,
        cond_dim=16, conditioner_hidden=32, conditioner_depth=3,
    )
    rng = np.random.default_rng(seed)
    tracks = three_mode_tracks(n_train_tracks, t_obs, t_pred, rng)
    windows = [rotation_normalize(w) for w in window_trajectories(tracks, t_obs, t_pred)]
    split = max(1, len(windows) // 10)
    train_set, val_set = windows[:-split], windows[-split:]
    model = FlowModel(config, seed=seed)
    noise = NoiseConfig(alpha=3.0, beta=0.05, gamma=0.05)
    fit(
        train_set, val_set, model,
        TrainConfig(learning_rate=1e-3, batch_size=128, epochs=epochs, seed=seed),
        noise,
    )

    eval_tracks = three_mode_tracks(n_eval_windows, t_obs, t_pred, rng)
    eval_windows = [
        rotation_normalize(w)
        for w in window_trajectories(eval_tracks, t_obs, t_pred)
    ]
    generator = torch.Generator()
    generator.manual_seed(seed + 1)
    sets = [predict(model, w, n_samples, generator) for w in eval_windows]

    rank_ade = np.zeros((n_samples, len(sets)))
    for j, ps in enumerate(sets):
        errors = np.linalg.norm(ps.samples - ps.ground_truth[None], axis=2).mean(axis=1)
        order = np.argsort(-ps.log_likelihoods, kind="stable")
        rank_ade[:, j] = errors[order]
    return RankStudy(prediction_sets=sets, rank_ade=rank_ade)


@dataclass
class AblationStudy:
    augmented_ades: list[float]
    plain_ades: list[float]

    @property
    def augmented_mean(self) -> float:
        return float(np.mean(self.augmented_ades))

    @property
    def plain_mean(self) -> float:
        return float(np.mean(self.plain_ades))


def scaling_ablation_study(
    seeds: tuple[int, ...] = (0, 1, 2),
    train_speed_range: tuple[float, float] = (0.9, 1.1),
    eval_speed_range: tuple[float, float] = (0.5, 2.0),
    n_train_tracks: int = 400,
    n_eval_tracks: int = 150,
    n_samples: int = 20,
    epochs: int = 30,
) -> AblationStudy:
    """Same runs with and without scale augmentation, scored on wider speeds.

    Training speeds cover a narrow band while evaluation speeds extend well
    beyond it, which is exactly the gap the augmentation is meant to close.
    """
    t_obs, t_pred = 8, 8
    config = FlowConfig(
        dim=2 * t_pred, n_layers=5, k_bins=8, support_b=15.0,
        cond_dim=16, conditioner_hidden=32, conditioner_depth=2,
    )
    augment = AugmentConfig(mu=1.0, sigma=0.5, s_min=0.3, s_max=1.7)
    noise = NoiseConfig(alpha=3.0, beta=0.05, gamma=0.05)

    augmented, plain = [], []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        tracks = speed_diverse_tracks(n_train_tracks, 20, rng, train_speed_range)
        windows = [
            rotation_normalize(w) for w in window_trajectories(tracks, t_obs, t_pred)
        ]
        split = max(1, len(windows) // 10)
        train_set, val_set = windows[:-split], windows[-split:]

        eval_rng = np.random.default_rng(10_000 + seed)
        eval_tracks = speed_diverse_tracks(n_eval_tracks, 16, eval_rng, eval_speed_range)
        eval_windows = [
            rotation_normalize(w)
            for w in window_trajectories(eval_tracks, t_obs, t_pred)
        ]

        for label, aug in (("augmented", augment), ("plain", None)):
            model = FlowModel(config, seed=seed)
            fit(
                train_set, val_set, model,
                TrainConfig(learning_rate=1e-3, batch_size=128, epochs=epochs, seed=seed),
                noise,
                augment_cfg=aug,
            )
            generator = torch.Generator()
            generator.manual_seed(seed)
            ades = []
            for w in eval_windows:
                ps = predict(model, w, n_samples, generator)
                errors = np.linalg.norm(
                    ps.samples - ps.ground_truth[None], axis=2
                ).mean(axis=1)
                ades.append(errors.min())
            (augmented if label == "augmented" else plain).append(float(np.mean(ades)))
    return AblationStudy(augmented_ades=augmented, plain_ades=plain)

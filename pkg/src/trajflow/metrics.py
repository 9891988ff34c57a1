"""Displacement-error metrics, likelihood ranking and top-k prediction.

Samples are decoded absolute tracks; the ground truth may be shorter than
the prediction horizon (evaluation windows with partial futures), in which
case errors are taken over the available ground-truth steps and the final
displacement error uses the last available step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from trajflow.data import TrajectoryWindow, decode_prediction
from trajflow.errors import InvalidInputError
from trajflow.flows import FlowModel
from trajflow.training import unscale


@dataclass(frozen=True)
class PredictionSet:
    """Sampled tracks (S, T, 2) with log-likelihoods (S,) and ground truth (Tg, 2)."""

    samples: np.ndarray
    log_likelihoods: np.ndarray
    ground_truth: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        lls = np.asarray(self.log_likelihoods, dtype=np.float64)
        gt = np.asarray(self.ground_truth, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "log_likelihoods", lls)
        object.__setattr__(self, "ground_truth", gt)
        if samples.ndim != 3 or samples.shape[2] != 2 or samples.shape[0] < 1:
            raise InvalidInputError(f"samples must be (S, T, 2), got {samples.shape}")
        if lls.shape != (samples.shape[0],):
            raise InvalidInputError("log_likelihoods must match the sample count")
        if gt.ndim != 2 or gt.shape[1] != 2 or not 1 <= len(gt) <= samples.shape[1]:
            raise InvalidInputError(
                f"ground truth must be (Tg, 2) with 1 <= Tg <= {samples.shape[1]}"
            )

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


def _per_step_errors(ps: PredictionSet) -> np.ndarray:
    """Euclidean error of every sample at every ground-truth step, (S, Tg)."""
    t_gt = len(ps.ground_truth)
    return np.linalg.norm(ps.samples[:, :t_gt] - ps.ground_truth[None], axis=-1)


def min_ade(ps: PredictionSet) -> float:
    """Smallest per-sample mean displacement error over the ground-truth steps."""
    return float(_per_step_errors(ps).mean(axis=1).min())


def min_fde(ps: PredictionSet) -> float:
    """Smallest displacement error at the last ground-truth step."""
    return float(_per_step_errors(ps)[:, -1].min())


def oracle_top_fraction(
    ps: PredictionSet,
    fraction: float,
    horizon_step: int,
    selection: str = "per-step",
) -> float:
    """Mean error of the best ceil(fraction * S) samples at `horizon_step`.

    `selection` picks the retained samples by their error at that step
    ("per-step") or by whole-track mean error ("whole-track").
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError(f"fraction must be in (0, 1], got {fraction}")
    errors = _per_step_errors(ps)
    if not 0 <= horizon_step < errors.shape[1]:
        raise InvalidInputError(
            f"horizon_step {horizon_step} outside ground truth of length {errors.shape[1]}"
        )
    keep = math.ceil(fraction * ps.n_samples)
    at_step = errors[:, horizon_step]
    if selection == "per-step":
        ranked = np.sort(at_step)
    elif selection == "whole-track":
        ranked = at_step[np.argsort(errors.mean(axis=1), kind="stable")]
    else:
        raise InvalidInputError(f"unknown selection rule {selection!r}")
    return float(ranked[:keep].mean())


def rank_by_likelihood(ps: PredictionSet) -> np.ndarray:
    """Sample indices sorted by descending log-likelihood (stable)."""
    return np.argsort(-ps.log_likelihoods, kind="stable")


def sample_tracks(
    model: FlowModel,
    window: TrajectoryWindow,
    n_samples: int,
    generator: torch.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample, unscale and decode absolute tracks (S, T, 2) with log-likelihoods."""
    if n_samples < 1:
        raise InvalidInputError("n_samples must be >= 1")
    obs = torch.as_tensor(window.observed_rel, dtype=torch.float64).unsqueeze(0)
    with torch.no_grad():
        c = model.encode(obs).squeeze(0)
    z, lls = model.sample(c, n_samples, generator)
    x_rel = unscale(z, model.alpha).numpy()
    decoded = np.stack(
        [decode_prediction(row, window.anchor, window.rotation) for row in x_rel]
    )
    return decoded, lls.numpy()


def predict(
    model: FlowModel,
    window: TrajectoryWindow,
    n_samples: int,
    generator: torch.Generator,
) -> PredictionSet:
    """Sampled predictions for one window, paired with its ground truth."""
    decoded, lls = sample_tracks(model, window, n_samples, generator)
    return PredictionSet(decoded, lls, window.future_abs)


def top_k_predict(
    model: FlowModel,
    window: TrajectoryWindow,
    n_candidates: int,
    k: int,
    generator: torch.Generator,
) -> PredictionSet:
    """Keep the k most likely of n_candidates sampled predictions.

    Likelihood ties break by sample index (stable), so results are
    deterministic for a fixed generator state.
    """
    if not 1 <= k <= n_candidates:
        raise InvalidInputError(f"need 1 <= k <= n_candidates, got k={k}, n={n_candidates}")
    candidates = predict(model, window, n_candidates, generator)
    keep = rank_by_likelihood(candidates)[:k]
    return PredictionSet(
        candidates.samples[keep],
        candidates.log_likelihoods[keep],
        candidates.ground_truth,
    )


def likelihood_rank_curve(prediction_sets: list[PredictionSet]) -> np.ndarray:
    """Mean ADE and FDE per likelihood rank across windows, shape (S, 2).

    Row r holds the averages of the rank-(r+1) sample (descending
    likelihood) over all windows.
    """
    if not prediction_sets:
        raise InvalidInputError("need at least one prediction set")
    n = prediction_sets[0].n_samples
    if any(ps.n_samples != n for ps in prediction_sets):
        raise InvalidInputError("all prediction sets must share the sample count")
    curve = np.zeros((n, 2))
    for ps in prediction_sets:
        errors = _per_step_errors(ps)
        order = rank_by_likelihood(ps)
        curve[:, 0] += errors[order].mean(axis=1)
        curve[:, 1] += errors[order][:, -1]
    return curve / len(prediction_sets)


@dataclass
class EvalReport:
    n_windows: int
    mean_min_ade: float
    mean_min_fde: float
    oracle: dict[int, float]
    rank_curve: np.ndarray


def evaluate_model(
    model: FlowModel,
    windows: list[TrajectoryWindow],
    n_samples: int,
    generator: torch.Generator,
    oracle_steps: tuple[int, ...] = (),
    oracle_fraction: float = 0.1,
    top_k_of: int | None = None,
) -> EvalReport:
    """Predict every window and aggregate metrics.

    Oracle errors at a step average only over the windows whose ground truth
    reaches that step. With `top_k_of`, each window keeps the `n_samples`
    most likely of `top_k_of` candidates instead of plain sampling.
    """
    if not windows:
        raise InvalidInputError("no evaluation windows")
    sets = []
    for w in windows:
        if top_k_of is None:
            sets.append(predict(model, w, n_samples, generator))
        else:
            sets.append(top_k_predict(model, w, top_k_of, n_samples, generator))
    ades = [min_ade(ps) for ps in sets]
    fdes = [min_fde(ps) for ps in sets]
    oracle = {}
    for step in oracle_steps:
        vals = [
            oracle_top_fraction(ps, oracle_fraction, step)
            for ps in sets
            if step < len(ps.ground_truth)
        ]
        if vals:
            oracle[step] = float(np.mean(vals))
    full = [ps for ps in sets if len(ps.ground_truth) == sets[0].samples.shape[1]]
    curve = likelihood_rank_curve(full) if full else np.zeros((n_samples, 2))
    return EvalReport(
        n_windows=len(windows),
        mean_min_ade=float(np.mean(ades)),
        mean_min_fde=float(np.mean(fdes)),
        oracle=oracle,
        rank_curve=curve,
    )

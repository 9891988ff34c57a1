"""Synthetic datasets for controlled density and trajectory experiments.

These generators drive the property gates: a two-component Gaussian mixture
for density recovery and normalization checks, constant-velocity tracks
whose displacement structure sits exactly on a manifold (zero lateral
displacement, repeated longitudinal values), a three-mode branching task
where likelihood ranking has signal, and a speed-diverse task where the test
speeds extend beyond the training range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from trajflow.data import Trajectory


@dataclass(frozen=True)
class GaussianMixture2D:
    """Two-component 2-d Gaussian mixture with diagonal covariance."""

    means: tuple[tuple[float, float], ...] = ((-2.0, -1.0), (2.0, 1.0))
    stds: tuple[float, ...] = (0.6, 0.8)
    weights: tuple[float, ...] = (0.4, 0.6)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        means = np.asarray(self.means)[comp]
        stds = np.asarray(self.stds)[comp][:, None]
        return means + stds * rng.normal(size=(n, 2))

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        parts = []
        for (mx, my), std, w in zip(self.means, self.stds, self.weights):
            d2 = ((x[:, 0] - mx) ** 2 + (x[:, 1] - my) ** 2) / std**2
            parts.append(np.log(w) - d2 / 2 - np.log(2 * np.pi * std**2))
        stacked = np.stack(parts)
        peak = stacked.max(axis=0)
        return peak + np.log(np.exp(stacked - peak).sum(axis=0))

    def mc_entropy(self, n: int, rng: np.random.Generator) -> float:
        """Monte-Carlo differential entropy, -E[log p]."""
        return float(-self.log_pdf(self.sample(n, rng)).mean())


def constant_velocity_tracks(
    n_tracks: int,
    length: int,
    rng: np.random.Generator,
    speed_range: tuple[float, float] = (0.5, 2.0),
) -> list[Trajectory]:
    """Straight constant-speed tracks: displacements repeat exactly per track."""
    tracks = []
    for i in range(n_tracks):
        speed = rng.uniform(*speed_range)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        start = rng.uniform(-10.0, 10.0, size=2)
        step = speed * np.array([math.cos(heading), math.sin(heading)])
        positions = start + np.arange(length)[:, None] * step
        tracks.append(Trajectory(f"cv{i}", np.arange(length), positions))
    return tracks


def three_mode_tracks(
    n_tracks: int,
    t_obs: int,
    t_pred: int,
    rng: np.random.Generator,
    mode_probs: tuple[float, float, float] = (0.6, 0.25, 0.15),
    turn_angle: float = math.pi / 3,
    jitter: float = 0.03,
) -> list[Trajectory]:
    """Straight observation, then the heading branches {straight, left, right}.

    Mode probabilities are deliberately unequal so sample likelihoods carry
    ranking information. Gaussian jitter keeps the data off exact manifolds.
    """
    length = t_obs + t_pred
    turns = (0.0, turn_angle, -turn_angle)
    tracks = []
    for i in range(n_tracks):
        speed = rng.uniform(0.8, 1.2)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        mode = rng.choice(3, p=np.asarray(mode_probs))
        pos = rng.uniform(-10.0, 10.0, size=2)
        positions = [pos.copy()]
        for t in range(1, length):
            if t >= t_obs:
                heading += turns[mode] / t_pred
            step = speed * np.array([math.cos(heading), math.sin(heading)])
            pos = pos + step + rng.normal(scale=jitter, size=2)
            positions.append(pos.copy())
        tracks.append(Trajectory(f"m{i}", np.arange(length), np.asarray(positions)))
    return tracks


def speed_diverse_tracks(
    n_tracks: int,
    length: int,
    rng: np.random.Generator,
    speed_range: tuple[float, float],
    curvature: float = 0.15,
    jitter: float = 0.02,
) -> list[Trajectory]:
    """Gently curving tracks whose speeds span `speed_range`."""
    tracks = []
    for i in range(n_tracks):
        speed = rng.uniform(*speed_range)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        turn = rng.normal(0.0, curvature)
        pos = rng.uniform(-10.0, 10.0, size=2)
        positions = [pos.copy()]
        for _ in range(length - 1):
            heading += turn
            step = speed * np.array([math.cos(heading), math.sin(heading)])
            pos = pos + step + rng.normal(scale=jitter * speed, size=2)
            positions.append(pos.copy())
        tracks.append(Trajectory(f"s{i}", np.arange(length), np.asarray(positions)))
    return tracks


def mixture_windows(
    mixture: GaussianMixture2D, n: int, rng: np.random.Generator, t_obs: int = 3
):
    """Wrap mixture draws as degenerate windows (constant observation, one step).

    The observation is constant, so the conditioning vector is the same for
    every window and the flow learns the unconditional 2-d density.
    """
    from trajflow.data import TrajectoryWindow

    samples = mixture.sample(n, rng)
    observed = np.zeros((t_obs, 2))
    windows = []
    for point in samples:
        windows.append(
            TrajectoryWindow(
                observed_abs=observed,
                future_abs=point[None, :],
                anchor=np.zeros(2),
                rotation=0.0,
                observed_rel=np.zeros((t_obs - 1, 2)),
                future_rel=point[None, :].copy(),
            )
        )
    return windows

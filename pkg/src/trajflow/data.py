"""Dataset ingestion, windowing, rotation normalization and augmentation.

Input text format: whitespace-separated rows `frame_id agent_id x y`, one
observation per row; lines starting with `#` are comments. Rows are grouped
by agent and sorted by frame. Agents whose frame stride is not constant are
dropped with a logged warning, never silently.

A window pairs `t_obs` observed positions with up to `t_pred` future ones.
Absolute positions stay in the original coordinate frame; the relative
(displacement) forms live in the rotation-normalized frame in which the last
observed displacement points along (1, 0). The rotation angle and the anchor
(the last observed position) are kept so predictions can be decoded back:
cumulative-sum the displacements from the anchor, then rotate back.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from trajflow.encoder import to_displacements
from trajflow.errors import DatasetParseError, InvalidInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trajectory:
    agent_id: str
    frames: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64)
        positions = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "positions", positions)
        if len(frames) != len(positions) or len(frames) < 2:
            raise InvalidInputError(
                f"agent {self.agent_id}: need >= 2 aligned frames and positions"
            )
        strides = np.diff(frames)
        if np.any(strides <= 0) or np.any(strides != strides[0]):
            raise InvalidInputError(
                f"agent {self.agent_id}: frames must increase with constant stride"
            )
        if not np.all(np.isfinite(positions)):
            raise InvalidInputError(f"agent {self.agent_id}: non-finite positions")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class AugmentConfig:
    """Truncated-normal scale augmentation parameters."""

    mu: float = 1.0
    sigma: float = 0.5
    s_min: float = 0.3
    s_max: float = 1.7

    def __post_init__(self):
        if not (self.s_min <= self.mu <= self.s_max):
            raise InvalidInputError("mu must lie within [s_min, s_max]")
        if self.sigma < 0:
            raise InvalidInputError("sigma must be >= 0")


@dataclass(frozen=True)
class TrajectoryWindow:
    """One (observed, future) pair with decode metadata.

    observed_abs, future_abs: original-frame positions. observed_rel,
    future_rel: displacements in the rotation-normalized frame (future_rel[0]
    steps from the anchor). rotation: angle applied by the normalization.
    """

    observed_abs: np.ndarray
    future_abs: np.ndarray
    anchor: np.ndarray
    rotation: float
    observed_rel: np.ndarray
    future_rel: np.ndarray


def load_dataset(path, format: str = "eth-ucy-text", scale: float = 1.0) -> list[Trajectory]:
    """Parse a trajectory text file into per-agent trajectories.

    `scale` multiplies all coordinates at load time (drone-style recordings
    are conventionally scaled by 1/5). Note this is not idempotent: applying
    scale 0.2 twice scales by 0.04.
    """
    if format not in ("eth-ucy-text", "drone-text"):
        raise InvalidInputError(f"unknown dataset format: {format!r}")
    rows_by_agent: dict[str, list[tuple[int, float, float]]] = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 4:
                raise DatasetParseError(
                    f"expected 4 columns (frame_id agent_id x y), got {len(parts)}",
                    line_number=line_no,
                )
            try:
                frame = int(float(parts[0]))
                agent = parts[1]
                x, y = float(parts[2]), float(parts[3])
            except ValueError as exc:
                raise DatasetParseError(str(exc), line_number=line_no) from exc
            rows_by_agent.setdefault(agent, []).append((frame, x, y))

    trajectories = []
    for agent, rows in rows_by_agent.items():
        rows.sort(key=lambda r: r[0])
        frames = np.array([r[0] for r in rows], dtype=np.int64)
        positions = np.array([[r[1], r[2]] for r in rows], dtype=np.float64) * scale
        if len(frames) < 2:
            logger.warning("agent %s dropped: fewer than two observations", agent)
            continue
        strides = np.diff(frames)
        if np.any(strides <= 0) or np.any(strides != strides[0]):
            logger.warning("agent %s dropped: non-constant frame stride", agent)
            continue
        trajectories.append(Trajectory(agent, frames, positions))
    return trajectories


def save_dataset(trajectories: list[Trajectory], path) -> None:
    """Write trajectories in the input text format (one row per observation)."""
    with open(path, "w") as fh:
        for traj in trajectories:
            for frame, (x, y) in zip(traj.frames, traj.positions):
                fh.write(f"{frame} {traj.agent_id} {float(x)!r} {float(y)!r}\n")


def _window_from_positions(observed: np.ndarray, future: np.ndarray) -> TrajectoryWindow:
    anchor = observed[-1].copy()
    observed_rel = to_displacements(observed)
    future_rel = np.diff(np.concatenate([anchor[None, :], future], axis=0), axis=0)
    return TrajectoryWindow(
        observed_abs=observed.copy(),
        future_abs=future.copy(),
        anchor=anchor,
        rotation=0.0,
        observed_rel=observed_rel,
        future_rel=future_rel,
    )


def observation_window(positions) -> TrajectoryWindow:
    """Wrap an observed track (no future) for prediction, rotation-normalized."""
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2 or len(pos) < 2:
        raise InvalidInputError(f"need at least two 2-d positions, got shape {pos.shape}")
    return rotation_normalize(_window_from_positions(pos, pos[:0]))


def window_trajectories(
    trajs: list[Trajectory],
    t_obs: int,
    t_pred: int,
    step: int = 1,
    min_future: int | None = None,
) -> list[TrajectoryWindow]:
    """Slice trajectories into (observed, future) windows.

    With `min_future=None` (training mode) only full-length windows are kept.
    Otherwise (evaluation mode) windows with at least `min_future` future
    steps are also emitted, with a shortened future.
    """
    if t_obs < 2 or t_pred < 1 or step < 1:
        raise InvalidInputError("need t_obs >= 2, t_pred >= 1, step >= 1")
    if min_future is not None and not (1 <= min_future <= t_pred):
        raise InvalidInputError("min_future must lie in [1, t_pred]")
    required_future = t_pred if min_future is None else min_future
    windows = []
    for traj in trajs:
        pos = traj.positions
        start = 0
        while start + t_obs + required_future <= len(pos):
            observed = pos[start : start + t_obs]
            future = pos[start + t_obs : start + t_obs + t_pred]
            windows.append(_window_from_positions(observed, future))
            start += step
    return windows


def _rotate(points: np.ndarray, angle: float, center: np.ndarray) -> np.ndarray:
    cos, sin = math.cos(angle), math.sin(angle)
    rot = np.array([[cos, -sin], [sin, cos]])
    return (points - center) @ rot.T + center


def rotation_normalize(w: TrajectoryWindow) -> TrajectoryWindow:
    """Express the window's displacement forms in the heading-aligned frame.

    The frame is rotated about the anchor so the final observed displacement
    points along (1, 0); the applied angle is recorded for decoding. A zero
    final displacement leaves the rotation at 0, keeping the map total.
    """
    last = w.observed_abs[-1] - w.observed_abs[-2]
    if last[0] == 0.0 and last[1] == 0.0:
        angle = 0.0
    else:
        angle = -math.atan2(last[1], last[0])
    obs_rot = _rotate(w.observed_abs, angle, w.anchor)
    fut_rot = _rotate(w.future_abs, angle, w.anchor) if len(w.future_abs) else w.future_abs
    future_rel = np.diff(np.concatenate([w.anchor[None, :], fut_rot], axis=0), axis=0)
    return replace(
        w,
        rotation=angle,
        observed_rel=to_displacements(obs_rot),
        future_rel=future_rel,
    )


def rotate_back(predicted_abs: np.ndarray, rotation: float, anchor: np.ndarray) -> np.ndarray:
    """Map positions from the normalized frame back to the original frame."""
    return _rotate(np.asarray(predicted_abs, dtype=np.float64), -rotation, anchor)


def decode_prediction(z_rel, anchor, rotation: float) -> np.ndarray:
    """Flat displacement vector -> absolute positions in the original frame."""
    disp = np.asarray(z_rel, dtype=np.float64).reshape(-1, 2)
    anchor = np.asarray(anchor, dtype=np.float64)
    positions = anchor + np.cumsum(disp, axis=0)
    return rotate_back(positions, rotation, anchor)


def sample_scale(cfg: AugmentConfig, rng: np.random.Generator) -> float:
    """Draw from the normal(mu, sigma) truncated to [s_min, s_max] by rejection."""
    if cfg.sigma == 0.0:
        return cfg.mu
    while True:
        s = rng.normal(cfg.mu, cfg.sigma)
        if cfg.s_min <= s <= cfg.s_max:
            return float(s)


def scale_augment(positions, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Scale a track about its mean position by a truncated-normal factor."""
    pos = np.asarray(positions, dtype=np.float64)
    s = sample_scale(cfg, rng)
    if s == 1.0:
        return pos.copy()
    mean = pos.mean(axis=0)
    return mean + s * (pos - mean)


def split_train_val(windows: list, fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle, then split off round(fraction * N) validation windows."""
    if not 0.0 <= fraction < 1.0:
        raise InvalidInputError(f"fraction must be in [0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(windows))
    n_val = round(fraction * len(windows))
    val_idx = set(order[:n_val].tolist())
    train = [w for i, w in enumerate(windows) if i not in val_idx]
    val = [windows[i] for i in order[:n_val]]
    return train, val


def export_windows(windows: list[TrajectoryWindow], path, header: str = "") -> None:
    """Write one window per row: rotation, anchor, then flattened positions."""
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("# columns: n_obs n_future rotation anchor_x anchor_y obs_xy... future_xy...\n")
        for w in windows:
            fields = [
                str(len(w.observed_abs)),
                str(len(w.future_abs)),
                repr(float(w.rotation)),
                repr(float(w.anchor[0])),
                repr(float(w.anchor[1])),
            ]
            fields += [repr(float(v)) for v in w.observed_abs.reshape(-1)]
            fields += [repr(float(v)) for v in w.future_abs.reshape(-1)]
            fh.write(" ".join(fields) + "\n")

"""Seeded training loop over generated scenes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .loss import hungarian_loss
from .model import LaneSetDetector
from .scenes import SyntheticScene, generate_scene


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 200
    seed: int = 0
    n_scenes: int = 32
    batch_size: int = 16
    lr: float = 3e-3
    smooth_window: int = 20


@dataclass
class TrainResult:
    model: LaneSetDetector
    loss_trace: list[float] = field(default_factory=list)

    def smoothed(self, window: int) -> tuple[float, float]:
        head = self.loss_trace[:window]
        tail = self.loss_trace[-window:]
        return sum(head) / len(head), sum(tail) / len(tail)


def train(cfg: TrainConfig) -> TrainResult:
    """Gradient descent on the Hungarian loss; deterministic for a config."""
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)
    scenes = [generate_scene(cfg.seed * 10_000 + i) for i in range(cfg.n_scenes)]
    images = torch.stack([torch.from_numpy(s.image) for s in scenes])
    model = LaneSetDetector()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = torch.Generator().manual_seed(cfg.seed + 1)
    trace: list[float] = []
    for _ in range(cfg.steps):
        idx = torch.randperm(cfg.n_scenes, generator=rng)[: cfg.batch_size]
        batch_scenes = [scenes[i] for i in idx.tolist()]
        out = model(images[idx])
        loss = hungarian_loss(out, batch_scenes)
        value = float(loss.detach())
        if math.isnan(value) or math.isinf(value):
            raise TrainingDivergedError(f"loss became {value} at step {len(trace)}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(value)
    return TrainResult(model=model, loss_trace=trace)


def save_checkpoint(result: TrainResult, path: str | Path) -> None:
    torch.save({"state_dict": result.model.state_dict(), "loss_trace": result.loss_trace}, path)


def load_checkpoint(path: str | Path) -> LaneSetDetector:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = LaneSetDetector()
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model

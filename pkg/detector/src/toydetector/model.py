"""Small CNN encoder + attention decoder over learned query slots.

The network regresses a fixed-size set: Q slots each with an existence
logit and per-lane parameters (m, n, b), plus an image-wide shared
curvature/horizon pair (k, f). Slot count never depends on image content.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .scenes import IMAGE_SIZE

NUM_QUERIES = 8
D_MODEL = 32


@dataclass
class DetectorOutput:
    exist_logits: torch.Tensor  # (B, Q)
    params: torch.Tensor  # (B, Q, 3): m, n, b
    shared: torch.Tensor  # (B, 2): k, f

    @property
    def num_slots(self) -> int:
        return self.exist_logits.shape[1]


class LaneSetDetector(nn.Module):
    def __init__(self, num_queries: int = NUM_QUERIES, d_model: int = D_MODEL):
        super().__init__()
        self.num_queries = num_queries
        self.image_size = IMAGE_SIZE
        self.encoder = nn.Sequential(
            nn.Conv2d(1, 16, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(32, d_model, 3, stride=2, padding=1),
            nn.ReLU(),
        )
        n_tokens = (IMAGE_SIZE // 8) ** 2
        self.pos_embed = nn.Parameter(torch.randn(1, n_tokens, d_model) * 0.02)
        self.queries = nn.Parameter(torch.randn(1, num_queries, d_model) * 0.02)
        layer = nn.TransformerDecoderLayer(
            d_model=d_model,
            nhead=4,
            dim_feedforward=2 * d_model,
            dropout=0.0,
            batch_first=True,
        )
        self.decoder = nn.TransformerDecoder(layer, num_layers=2)
        self.exist_head = nn.Linear(d_model, 1)
        self.param_head = nn.Linear(d_model, 3)
        self.shared_head = nn.Linear(d_model, 2)

    def forward(self, images: torch.Tensor) -> DetectorOutput:
        if images.dim() == 3:
            images = images.unsqueeze(1)
        if images.shape[-2:] != (self.image_size, self.image_size):
            raise ValueError(
                f"expected {self.image_size}x{self.image_size} images, got {tuple(images.shape[-2:])}"
            )
        feats = self.encoder(images)  # (B, d, H/8, W/8)
        tokens = feats.flatten(2).transpose(1, 2) + self.pos_embed
        queries = self.queries.expand(images.shape[0], -1, -1)
        decoded = self.decoder(queries, tokens)
        return DetectorOutput(
            exist_logits=self.exist_head(decoded).squeeze(-1),
            params=self.param_head(decoded),
            shared=self.shared_head(tokens.mean(dim=1)),
        )

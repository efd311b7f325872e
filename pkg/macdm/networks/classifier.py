from __future__ import annotations

from typing import Optional

import torch
from torch import nn
from torch.nn import functional as F

from macdm.schemas.network import NetworkConfig

from .blocks import AttentionPool2d, Downsample, ResBlock, TimeEmbedding, norm

NUM_CLASSES = 2


class NoisyInputClassifier(nn.Module):
    """
    Encoder half of the denoiser with attention pooling and a two-way head.

    Trained on the same weighted noisy stacks the denoiser sees, so its input gradient can steer
    sampling.
    """

    def __init__(self, config: NetworkConfig, timesteps: Optional[int] = None) -> None:
        super().__init__()
        self.config = config
        self.timesteps = timesteps
        ch = config.base_channels
        self.time_embed = TimeEmbedding(ch)
        emb = self.time_embed.out_channels

        self.input_conv = nn.Conv2d(config.in_channels, ch, 3, padding=1)
        self.down = nn.ModuleList()
        current = ch
        size = config.image_size
        for level, mult in enumerate(config.channel_mults):
            for _ in range(config.blocks_per_level):
                self.down.append(ResBlock(current, ch * mult, emb, config.dropout))
                current = ch * mult
            if level != config.levels - 1:
                self.down.append(Downsample(current))
                size = (size + 1) // 2
        self.middle = ResBlock(current, current, emb, config.dropout)
        self.out_norm = nn.Sequential(norm(current), nn.SiLU())
        self.pool = AttentionPool2d(size, current, config.attention_heads)
        self.head = nn.Linear(current, NUM_CLASSES)

    def logits(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        emb = self.time_embed(t)
        h = self.input_conv(x)
        for layer in self.down:
            h = layer(h, emb) if isinstance(layer, ResBlock) else layer(h)
        h = self.out_norm(self.middle(h, emb))
        return self.head(self.pool(h))

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """Log-probabilities over (normal, CML)."""
        return F.log_softmax(self.logits(x, t), dim=-1)

from __future__ import annotations

from typing import List, Optional

import torch
from torch import nn

from macdm.schemas.network import NetworkConfig

from .blocks import Downsample, ResBlock, TimeEmbedding, Upsample, norm


class MaskConditionedUNet(nn.Module):
    """
    Time-conditioned encoder-decoder over the weighted (image, bone, lesion) stack.

    Output has 2·C channels: C noise predictions followed by C raw variance-interpolation logits.
    Class information never enters here; it arrives through classifier guidance.
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
        skip_channels: List[int] = [ch]
        current = ch
        for level, mult in enumerate(config.channel_mults):
            for _ in range(config.blocks_per_level):
                block = ResBlock(current, ch * mult, emb, config.dropout)
                current = ch * mult
                self.down.append(block)
                skip_channels.append(current)
            if level != config.levels - 1:
                self.down.append(Downsample(current))
                skip_channels.append(current)

        self.middle = nn.ModuleList(
            [ResBlock(current, current, emb, config.dropout), ResBlock(current, current, emb, config.dropout)]
        )

        self.up = nn.ModuleList()
        for level, mult in reversed(list(enumerate(config.channel_mults))):
            for i in range(config.blocks_per_level + 1):
                block = ResBlock(current + skip_channels.pop(), ch * mult, emb, config.dropout)
                current = ch * mult
                self.up.append(block)
                if level != 0 and i == config.blocks_per_level:
                    self.up.append(Upsample(current))

        self.out = nn.Sequential(
            norm(current), nn.SiLU(), nn.Conv2d(current, 2 * config.in_channels, 3, padding=1)
        )

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        emb = self.time_embed(t)
        h = self.input_conv(x)
        skips = [h]
        for layer in self.down:
            h = layer(h, emb) if isinstance(layer, ResBlock) else layer(h)
            skips.append(h)
        for layer in self.middle:
            h = layer(h, emb)
        for layer in self.up:
            if isinstance(layer, ResBlock):
                h = layer(torch.cat([h, skips.pop()], dim=1), emb)
            else:
                h = layer(h)
        return self.out(h)

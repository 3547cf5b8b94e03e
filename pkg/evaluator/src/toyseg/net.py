"""Torch network family built from a topology code and per-cell operations.

Structure follows the engine's published construction contract: stem with a
stride-2 entry conv, one block per cell (1x1x1 pre-conv per input, a searched
op per branch, sum, 1x1x1 post-conv), stride-2 convs down, trilinear x2 plus
1x1x1 conv up, and a trilinear exit stem back to full resolution.  Every cell
instantiates all three op branches, so one module doubles as the fixed-path
network and the weight-sharing super-network.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

OP_KINDS = ("3d", "p3d", "2d")

STEM = -1


def wiring_of(code) -> list[tuple[str, int, int | None]]:
    """(kind, primary, secondary) per cell from the level vector.

    A cell gets a second input when its previous-previous cell sits at the
    same level, or when it is an up cell, which takes the last same-level
    tensor before the matching down transition (the stem for a cell-0 down).
    """
    out = []
    for i, lev in enumerate(code):
        before = code[i - 1] if i else 0
        delta = lev - before
        kind = {1: "down", -1: "up", 0: "same"}[delta]
        secondary = None
        if kind == "up":
            down_at = next(
                j
                for j in range(len(code))
                if code[j] - (code[j - 1] if j else 0) == 1 and code[j] == lev + 1
            )
            secondary = down_at - 1 if down_at > 0 else STEM
        elif i >= 2 and code[i - 2] == lev:
            secondary = i - 2
        out.append((kind, i - 1 if i else STEM, secondary))
    return out


def _pad(kernel):
    return tuple(k // 2 for k in kernel)


class ConvBlock(nn.Module):
    """Conv3d with same padding, instance norm, and ReLU."""

    def __init__(self, cin, cout, kernel, stride=1, norm_act=True):
        super().__init__()
        self.conv = nn.Conv3d(cin, cout, kernel, stride=stride, padding=_pad(kernel))
        self.norm = nn.InstanceNorm3d(cout, affine=True) if norm_act else None

    def forward(self, x):
        x = self.conv(x)
        if self.norm is not None:
            x = F.relu(self.norm(x))
        return x


class BranchOp(nn.Module):
    """All three candidate ops for one cell input branch."""

    def __init__(self, channels):
        super().__init__()
        self.ops = nn.ModuleDict(
            {
                "3d": ConvBlock(channels, channels, (3, 3, 3)),
                "p3d": nn.Sequential(
                    ConvBlock(channels, channels, (3, 3, 1)),
                    ConvBlock(channels, channels, (1, 1, 3)),
                ),
                "2d": ConvBlock(channels, channels, (3, 3, 1)),
            }
        )

    def forward(self, x, kind):
        return self.ops[kind](x)


class Cell(nn.Module):
    def __init__(self, in_channels: list[int], channels: int):
        super().__init__()
        self.pre = nn.ModuleList(
            ConvBlock(cin, channels, (1, 1, 1)) for cin in in_channels
        )
        self.branches = nn.ModuleList(BranchOp(channels) for _ in in_channels)
        self.post = ConvBlock(channels, channels, (1, 1, 1))

    def forward(self, inputs, kind):
        merged = None
        for x, pre, branch in zip(inputs, self.pre, self.branches):
            y = branch(pre(x), kind)
            merged = y if merged is None else merged + y
        return self.post(merged)


class SegNet(nn.Module):
    """U-shaped segmentation network (and super-network) for one topology."""

    def __init__(self, code, base_filters=8, in_channels=1, num_classes=3):
        super().__init__()
        self.code = tuple(code)
        self.wiring = wiring_of(self.code)
        c0 = base_filters
        chan = lambda level: c0 * (2**level)

        self.stem0 = ConvBlock(in_channels, c0, (3, 3, 3))
        self.stem1 = ConvBlock(c0, c0, (3, 3, 3), stride=2)

        self.transitions = nn.ModuleList()
        self.cells = nn.ModuleList()
        for i, (lev, (kind, primary, secondary)) in enumerate(zip(self.code, self.wiring)):
            c = chan(lev)
            if kind == "down":
                self.transitions.append(ConvBlock(chan(lev - 1), c, (3, 3, 3), stride=2))
            elif kind == "up":
                self.transitions.append(ConvBlock(chan(lev + 1), c, (1, 1, 1)))
            else:
                self.transitions.append(nn.Identity())
            ins = [c]
            if secondary is not None:
                ins.append(c)  # same-level sources always match the cell width
            self.cells.append(Cell(ins, c))

        self.exit0 = ConvBlock(c0, c0, (3, 3, 3))
        self.exit1 = nn.Conv3d(c0, num_classes, (3, 3, 3), padding=1)

    def forward(self, x, ops):
        stem = self.stem1(self.stem0(x))
        outputs: list[torch.Tensor] = []

        def tensor_of(ref):
            return stem if ref == STEM else outputs[ref]

        for i, (kind, primary, secondary) in enumerate(self.wiring):
            h = tensor_of(primary)
            if kind == "down":
                h = self.transitions[i](h)
            elif kind == "up":
                h = F.interpolate(h, scale_factor=2, mode="trilinear", align_corners=False)
                h = self.transitions[i](h)
            inputs = [h]
            if secondary is not None:
                inputs.append(tensor_of(secondary))
            outputs.append(self.cells[i](inputs, ops[i]))

        h = self.exit0(outputs[-1])
        h = F.interpolate(h, scale_factor=2, mode="trilinear", align_corners=False)
        return self.exit1(h)

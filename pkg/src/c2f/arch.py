"""Materialize (topology, ops, scale) into a layer-level IR and cost it.

Construction rules: an entry stem (3x3x3 conv stride 1, then 3x3x3 conv
stride 2), one block per cell (a 1x1x1 pre-conv per input, the searched op on
each input branch, a sum join when there are two inputs, then a 1x1x1
post-conv), 3x3x3 stride-2 convs on down transitions, trilinear x2 plus a
1x1x1 conv on up transitions, and an exit stem (3x3x3 conv, trilinear up,
3x3x3 conv to the class count).  Filters start at round(base_filters *
multiplier), double per level down and halve per level up.

Cost conventions: params = conv weights + bias + 2*C_out affine when the conv
carries its norm/act; FLOPs = 2 * C_in * C_out * prod(kernel) * output voxels
per conv, with interpolation, joins, normalization, and activation at zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .errors import ConfigError, EvaluationError, StructuralError, ValidationError
from .fine import OpConfig, validate_ops
from .topology import STEM, Code, derive_wiring

INPUT = "input"

CONV = "conv"
UPSAMPLE = "trilinear-upsample"
SUM = "sum-join"

#: Kernel stacks realizing each searched cell operation.
OP_KERNELS = {
    "3d": ((3, 3, 3),),
    "p3d": ((3, 3, 1), (1, 1, 3)),
    "2d": ((3, 3, 1),),
}

ALLOWED_KERNELS = {(1, 1, 1), (3, 3, 3), (3, 3, 1), (1, 1, 3)}


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    in_channels: int
    out_channels: int
    level: int  # output resolution level; -1 = full input resolution
    kernel: tuple[int, int, int] | None = None
    stride: tuple[int, int, int] | None = None
    norm_act: bool = False

    def __post_init__(self):
        if self.kind == CONV:
            if self.kernel not in ALLOWED_KERNELS:
                raise ConfigError(f"unsupported conv kernel {self.kernel}")
            if any(s not in (1, 2) for s in self.stride):
                raise ConfigError(f"unsupported conv stride {self.stride}")


@dataclass(frozen=True)
class ArchitectureIR:
    layers: tuple[LayerSpec, ...]  # topological order
    edges: tuple[tuple[str, str], ...]  # (source id | "input", target id)
    code: Code
    ops: OpConfig
    base_filters: int
    multiplier: float
    in_channels: int
    num_classes: int

    def layer(self, layer_id: str) -> LayerSpec:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def sources(self, layer_id: str) -> list[str]:
        return [s for s, d in self.edges if d == layer_id]

    def sinks(self) -> list[str]:
        has_out = {s for s, _ in self.edges}
        return [l.id for l in self.layers if l.id not in has_out]


def scaled_base(base_filters: int, multiplier: float) -> int:
    """Channel count at level 0: nearest integer, never below 1."""
    return max(1, round(base_filters * multiplier))


class _Builder:
    def __init__(self):
        self.layers: list[LayerSpec] = []
        self.edges: list[tuple[str, str]] = []
        self._ids: set[str] = set()

    def add(self, layer: LayerSpec, *sources: str) -> str:
        if layer.id in self._ids:
            raise StructuralError(f"duplicate layer id {layer.id}")
        for src in sources:
            if src != INPUT and src not in self._ids:
                raise StructuralError(f"edge from unknown layer {src}")
            self.edges.append((src, layer.id))
        self._ids.add(layer.id)
        self.layers.append(layer)
        return layer.id


def materialize(
    code: Code,
    ops: OpConfig,
    base_filters: int = 32,
    multiplier: float = 1.0,
    in_channels: int = 1,
    num_classes: int = 3,
) -> ArchitectureIR:
    """Build the full layer graph for one colored topology."""
    code = tuple(code)
    ops = validate_ops(ops, len(code))
    if multiplier <= 0:
        raise ConfigError(f"multiplier must be positive, got {multiplier}")
    wiring = derive_wiring(code)  # validates the code
    c0 = scaled_base(base_filters, multiplier)
    chan = lambda level: c0 * (2**level)

    b = _Builder()
    b.add(
        LayerSpec("stem.conv0", CONV, in_channels, c0, -1, (3, 3, 3), (1, 1, 1), True),
        INPUT,
    )
    stem_out = b.add(
        LayerSpec("stem.conv1", CONV, c0, c0, 0, (3, 3, 3), (2, 2, 2), True),
        "stem.conv0",
    )

    def source_of(ref: int) -> tuple[str, int]:
        """(layer id, channels) of a cell output or the stem."""
        if ref == STEM:
            return stem_out, c0
        return f"cell{ref}.post", chan(code[ref])

    for i, (lev, cw) in enumerate(zip(code, wiring)):
        c = chan(lev)
        primary, primary_ch = source_of(cw.primary)
        if cw.kind == "down":
            primary = b.add(
                LayerSpec(
                    f"down{i}.conv", CONV, primary_ch, c, lev, (3, 3, 3), (2, 2, 2), True
                ),
                primary,
            )
            primary_ch = c
        elif cw.kind == "up":
            interp = b.add(
                LayerSpec(f"up{i}.interp", UPSAMPLE, primary_ch, primary_ch, lev),
                primary,
            )
            primary = b.add(
                LayerSpec(f"up{i}.conv", CONV, primary_ch, c, lev, (1, 1, 1), (1, 1, 1), True),
                interp,
            )
            primary_ch = c

        branches = [(primary, primary_ch)]
        if cw.secondary is not None:
            branches.append(source_of(cw.secondary))

        branch_outs = []
        for j, (src, src_ch) in enumerate(branches):
            tip = b.add(
                LayerSpec(
                    f"cell{i}.pre{j}", CONV, src_ch, c, lev, (1, 1, 1), (1, 1, 1), True
                ),
                src,
            )
            for stage, kernel in enumerate(OP_KERNELS[ops[i]]):
                suffix = "" if len(OP_KERNELS[ops[i]]) == 1 else "ab"[stage]
                tip = b.add(
                    LayerSpec(
                        f"cell{i}.op{j}{suffix}", CONV, c, c, lev, kernel, (1, 1, 1), True
                    ),
                    tip,
                )
            branch_outs.append(tip)

        joined = branch_outs[0]
        if len(branch_outs) == 2:
            joined = b.add(LayerSpec(f"cell{i}.sum", SUM, c, c, lev), *branch_outs)
        b.add(
            LayerSpec(f"cell{i}.post", CONV, c, c, lev, (1, 1, 1), (1, 1, 1), True),
            joined,
        )

    last, last_ch = source_of(len(code) - 1)
    if last_ch != c0:
        raise StructuralError("last cell does not end at level 0")  # unreachable: validated code
    b.add(
        LayerSpec("exit.conv0", CONV, c0, c0, 0, (3, 3, 3), (1, 1, 1), True), last
    )
    b.add(LayerSpec("exit.up", UPSAMPLE, c0, c0, -1), "exit.conv0")
    b.add(
        LayerSpec("exit.conv1", CONV, c0, num_classes, -1, (3, 3, 3), (1, 1, 1), False),
        "exit.up",
    )

    ir = ArchitectureIR(
        layers=tuple(b.layers),
        edges=tuple(b.edges),
        code=code,
        ops=ops,
        base_filters=base_filters,
        multiplier=multiplier,
        in_channels=in_channels,
        num_classes=num_classes,
    )
    validate_ir(ir)
    return ir


def validate_ir(ir: ArchitectureIR) -> None:
    """Assert graph and channel invariants; violations mean a builder bug."""
    order = {layer.id: i for i, layer in enumerate(ir.layers)}
    if len(order) != len(ir.layers):
        raise StructuralError("duplicate layer ids")
    for src, dst in ir.edges:
        if src != INPUT and order[src] >= order[dst]:
            raise StructuralError(f"edge {src}->{dst} is not forward; graph has a cycle")
    sinks = ir.sinks()
    if len(sinks) != 1:
        raise StructuralError(f"expected a single sink, found {sinks}")
    c0 = scaled_base(ir.base_filters, ir.multiplier)
    for layer in ir.layers:
        srcs = ir.sources(layer.id)
        if layer.kind == SUM:
            chans = [ir.layer(s).out_channels for s in srcs]
            levels = [ir.layer(s).level for s in srcs]
            if len(set(chans)) != 1 or len(set(levels)) != 1:
                raise StructuralError(
                    f"join {layer.id} inputs disagree: channels {chans}, levels {levels}"
                )
        elif len(srcs) != 1:
            raise StructuralError(f"{layer.id} must have exactly one input, has {srcs}")
        if layer.kind == CONV and layer.level >= 0:
            expect = c0 * (2**layer.level)
            if layer.out_channels != expect:
                raise StructuralError(
                    f"{layer.id} emits {layer.out_channels} channels at level "
                    f"{layer.level}; the level law requires {expect}"
                )
        reachable = srcs and all(s == INPUT or s in order for s in srcs)
        if not reachable:
            raise StructuralError(f"{layer.id} is unreachable")


def count_params(ir: ArchitectureIR) -> int:
    """Learnable parameter count (weights + bias + fused norm affine)."""
    total = 0
    for layer in ir.layers:
        if layer.kind != CONV:
            continue
        k1, k2, k3 = layer.kernel
        total += layer.in_channels * layer.out_channels * k1 * k2 * k3
        total += layer.out_channels
        if layer.norm_act:
            total += 2 * layer.out_channels
    return total


def _output_extents(
    ir: ArchitectureIR, input_extent: tuple[int, int, int]
) -> dict[str, tuple[int, int, int]]:
    extents: dict[str, tuple[int, int, int]] = {INPUT: tuple(input_extent)}
    for layer in ir.layers:
        srcs = ir.sources(layer.id)
        ins = {extents[s] for s in srcs}
        if len(ins) != 1:
            raise StructuralError(f"{layer.id} receives mismatched extents {ins}")
        ext = next(iter(ins))
        if layer.kind == CONV:
            for axis, s in zip(ext, layer.stride):
                if axis % s:
                    raise StructuralError(
                        f"extent {ext} not divisible by stride {layer.stride} at {layer.id}"
                    )
            ext = tuple(a // s for a, s in zip(ext, layer.stride))
        elif layer.kind == UPSAMPLE:
            ext = tuple(a * 2 for a in ext)
        extents[layer.id] = ext
    return extents


def count_flops(ir: ArchitectureIR, input_extent: tuple[int, int, int] = (96, 96, 96)) -> int:
    """Total conv FLOPs (1 MAC = 2 FLOPs) at the given input extent."""
    depth = 1 + max(ir.code)
    for axis in input_extent:
        if axis % (2**depth):
            raise StructuralError(
                f"input extent {input_extent} must be divisible by 2^{depth}"
            )
    extents = _output_extents(ir, tuple(input_extent))
    total = 0
    for layer in ir.layers:
        if layer.kind != CONV:
            continue
        k1, k2, k3 = layer.kernel
        e1, e2, e3 = extents[layer.id]
        total += 2 * layer.in_channels * layer.out_channels * k1 * k2 * k3 * e1 * e2 * e3
    return total


@dataclass(frozen=True)
class CostReport:
    params: int
    flops: int
    input_extent: tuple[int, int, int]


def cost_report(ir: ArchitectureIR, input_extent: tuple[int, int, int] = (96, 96, 96)) -> CostReport:
    return CostReport(
        params=count_params(ir),
        flops=count_flops(ir, input_extent),
        input_extent=tuple(input_extent),
    )


DEFAULT_MULTIPLIERS = tuple(0.25 * i for i in range(1, 9))


@dataclass(frozen=True)
class ScaleRow:
    multiplier: float
    params: int | None = None
    flops: int | None = None
    score: float | None = None
    error: str | None = None


def scaling_grid(
    code: Code,
    ops: OpConfig,
    multipliers=DEFAULT_MULTIPLIERS,
    evaluator=None,
    base_filters: int = 32,
    input_extent: tuple[int, int, int] = (96, 96, 96),
    in_channels: int = 1,
    num_classes: int = 3,
) -> list[ScaleRow]:
    """Cost (and optionally score) the architecture across channel multipliers.

    Rows fail independently: a materialization or evaluation error is recorded
    on its row and the remaining multipliers still run.
    """
    if not multipliers:
        raise ConfigError("multiplier grid is empty")
    if any(m <= 0 for m in multipliers):
        raise ConfigError("all multipliers must be positive")
    rows = []
    for m in sorted(multipliers):
        try:
            ir = materialize(
                code,
                ops,
                base_filters=base_filters,
                multiplier=m,
                in_channels=in_channels,
                num_classes=num_classes,
            )
            row = ScaleRow(
                multiplier=m, params=count_params(ir), flops=count_flops(ir, input_extent)
            )
            if evaluator is not None:
                row = replace(row, score=evaluator.evaluate_topology(code, ops).score)
        except (ValidationError, StructuralError, ConfigError, EvaluationError) as exc:
            row = ScaleRow(multiplier=m, error=str(exc))
        rows.append(row)
    return rows


def ir_to_json_dict(ir: ArchitectureIR) -> dict:
    return {
        "meta": {
            "code": list(ir.code),
            "ops": list(ir.ops),
            "base_filters": ir.base_filters,
            "multiplier": ir.multiplier,
            "in_channels": ir.in_channels,
            "num_classes": ir.num_classes,
        },
        "layers": [
            {
                "id": l.id,
                "kind": l.kind,
                "in_channels": l.in_channels,
                "out_channels": l.out_channels,
                "level": l.level,
                "kernel": list(l.kernel) if l.kernel else None,
                "stride": list(l.stride) if l.stride else None,
                "norm_act": l.norm_act,
            }
            for l in ir.layers
        ],
        "edges": [list(e) for e in ir.edges],
    }


def ir_from_json_dict(doc: dict) -> ArchitectureIR:
    meta = doc["meta"]
    layers = tuple(
        LayerSpec(
            id=l["id"],
            kind=l["kind"],
            in_channels=l["in_channels"],
            out_channels=l["out_channels"],
            level=l["level"],
            kernel=tuple(l["kernel"]) if l["kernel"] else None,
            stride=tuple(l["stride"]) if l["stride"] else None,
            norm_act=l["norm_act"],
        )
        for l in doc["layers"]
    )
    ir = ArchitectureIR(
        layers=layers,
        edges=tuple((s, d) for s, d in doc["edges"]),
        code=tuple(meta["code"]),
        ops=tuple(meta["ops"]),
        base_filters=meta["base_filters"],
        multiplier=meta["multiplier"],
        in_channels=meta["in_channels"],
        num_classes=meta["num_classes"],
    )
    validate_ir(ir)
    return ir


def ir_to_dot(ir: ArchitectureIR) -> str:
    """GraphViz description of the layer graph for visualization tooling."""
    def label(l: LayerSpec) -> str:
        if l.kind == CONV:
            k = "x".join(str(x) for x in l.kernel)
            s = max(l.stride)
            extra = f" /{s}" if s > 1 else ""
            return f"{l.id}\\nconv {k}{extra} {l.in_channels}->{l.out_channels}"
        if l.kind == UPSAMPLE:
            return f"{l.id}\\ntrilinear x2"
        return f"{l.id}\\nsum"

    lines = ["digraph architecture {", "  rankdir=LR;", f'  {json.dumps(INPUT)} [shape=box];']
    for l in ir.layers:
        lines.append(f"  {json.dumps(l.id)} [label={json.dumps(label(l))}];")
    for src, dst in ir.edges:
        lines.append(f"  {json.dumps(src)} -> {json.dumps(dst)};")
    lines.append("}")
    return "\n".join(lines) + "\n"

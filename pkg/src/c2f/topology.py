"""Macro-level topology space: codes, pruning, enumeration, and cell wiring.

A topology is encoded as a vector of per-cell resolution levels.  The level
starts at 0 (the entry stem output), goes up by one across a down-sampling
cell and down by one across an up-sampling cell.  The pruned space keeps only
strict encoder-decoder paths: a fixed number of down transitions, the same
number of up transitions, and every down before every up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

from .errors import ConfigError, StructuralError, ValidationError

Code = tuple[int, ...]

#: Pseudo-index naming the entry-stem output when it feeds a cell.
STEM = -1


@dataclass(frozen=True)
class SpaceSpec:
    """Shape of the topology search space."""

    num_cells: int = 12
    num_down: int = 3
    num_up: int = 3
    max_level: int | None = None

    def __post_init__(self):
        if self.max_level is None:
            object.__setattr__(self, "max_level", self.num_down)
        if self.num_cells < 1:
            raise ConfigError(f"num_cells must be >= 1, got {self.num_cells}")
        if self.num_down != self.num_up:
            raise ConfigError(
                f"num_down ({self.num_down}) must equal num_up ({self.num_up}): "
                "the network must return to its starting resolution"
            )
        if self.num_down + self.num_up > self.num_cells:
            raise ConfigError(
                f"empty space: {self.num_down}+{self.num_up} transitions do not "
                f"fit in {self.num_cells} cells"
            )
        if self.max_level < self.num_down:
            raise ConfigError(
                f"max_level ({self.max_level}) must be >= num_down ({self.num_down})"
            )

    def to_json_dict(self) -> dict:
        return {
            "num_cells": self.num_cells,
            "num_down": self.num_down,
            "num_up": self.num_up,
            "max_level": self.max_level,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SpaceSpec":
        return cls(
            num_cells=d["num_cells"],
            num_down=d["num_down"],
            num_up=d["num_up"],
            max_level=d.get("max_level"),
        )


@dataclass(frozen=True)
class Verdict:
    """Outcome of validate_code: valid, or the first violated rule."""

    valid: bool
    rule: str | None = None
    index: int | None = None

    def __bool__(self) -> bool:
        return self.valid


@dataclass(frozen=True)
class CellWiring:
    """Input wiring of one cell.

    ``primary`` is the previous cell (or STEM for cell 0).  ``secondary`` is
    the previous-previous same-level cell, or the encoder skip source for an
    up cell (possibly STEM), or None when the cell has a single input.
    """

    kind: str  # "same" | "down" | "up"
    primary: int
    secondary: int | None = None

    def inputs(self) -> tuple[int, ...]:
        if self.secondary is None:
            return (self.primary,)
        return (self.primary, self.secondary)


def steps_of(code: Code) -> tuple[int, ...]:
    """Per-cell level deltas, including the implicit step from the stem (level 0)."""
    prev = 0
    out = []
    for lev in code:
        out.append(lev - prev)
        prev = lev
    return tuple(out)


def validate_code(code: Code, spec: SpaceSpec) -> Verdict:
    """Check a code against the pruned-space invariants.

    Returns the first violated rule by name; a wrong-length code is a
    structural error rather than an invariant violation.
    """
    if len(code) != spec.num_cells:
        raise StructuralError(
            f"code length {len(code)} does not match spec.num_cells {spec.num_cells}"
        )
    for i, lev in enumerate(code):
        if not 0 <= lev <= spec.max_level:
            return Verdict(False, "level-bounds", i)
    steps = steps_of(code)
    for i, s in enumerate(steps):
        if abs(s) > 1:
            return Verdict(False, "step-size", i)
    # strict U-shape: no down transition after any up transition
    seen_up = False
    for i, s in enumerate(steps):
        if s == -1:
            seen_up = True
        elif s == 1 and seen_up:
            return Verdict(False, "u-shape", i)
    downs = sum(1 for s in steps if s == 1)
    if downs != spec.num_down:
        return Verdict(False, "down-count", None)
    ups = sum(1 for s in steps if s == -1)
    if ups != spec.num_up:
        return Verdict(False, "up-count", None)
    return Verdict(True)


def infer_spec(code: Code) -> SpaceSpec:
    """Reconstruct the space spec a pruned code belongs to."""
    steps = steps_of(code)
    downs = sum(1 for s in steps if s == 1)
    ups = sum(1 for s in steps if s == -1)
    if downs != ups:
        raise ValidationError(
            f"code has {downs} down and {ups} up transitions; not a pruned-space code"
        )
    max_level = max([0, *code])
    return SpaceSpec(len(code), downs, ups, max(max_level, downs))


def enumerate_pruned(spec: SpaceSpec) -> list[Code]:
    """All pruned-space codes, in lexicographic order of the transition-index set.

    Each code places the ``num_down + num_up`` transitions at a distinct set of
    cell indices, downs first; the count is C(num_cells, num_down + num_up).
    """
    n, d, u = spec.num_cells, spec.num_down, spec.num_up
    out: list[Code] = []
    for pos in combinations(range(n), d + u):
        downs = set(pos[:d])
        ups = set(pos[d:])
        lev = 0
        levels = []
        for i in range(n):
            if i in downs:
                lev += 1
            elif i in ups:
                lev -= 1
            levels.append(lev)
        out.append(tuple(levels))
    return out


def count_pruned(spec: SpaceSpec) -> int:
    return math.comb(spec.num_cells, spec.num_down + spec.num_up)


def count_full_space(spec: SpaceSpec) -> int:
    """Count unpruned level traces by dynamic programming.

    Convention: cell 0 sits at level 0, the remaining num_cells-1 steps are
    free in {-1, 0, +1} bounded to [0, max_level], and the trace may end at
    any level.
    """
    L = spec.max_level
    counts = [0] * (L + 1)
    counts[0] = 1
    for _ in range(spec.num_cells - 1):
        nxt = [0] * (L + 1)
        for lev, c in enumerate(counts):
            if not c:
                continue
            for step in (-1, 0, 1):
                m = lev + step
                if 0 <= m <= L:
                    nxt[m] += c
        counts = nxt
    return sum(counts)


def derive_wiring(code: Code, spec: SpaceSpec | None = None) -> tuple[CellWiring, ...]:
    """Cell input wiring for a valid pruned-space code.

    Every cell takes its previous cell (cell 0 takes the stem).  A second
    input exists when (1) the previous-previous cell sits at the same level,
    or (2) the cell is an up cell, in which case it takes the last tensor at
    its level before the level-matched down transition (the stem when that
    down happened at cell 0).  When both rules apply they name the same cell.
    """
    if spec is None:
        spec = infer_spec(code)
    verdict = validate_code(code, spec)
    if not verdict:
        raise ValidationError(
            f"invalid code {list(code)}: rule {verdict.rule!r} at index {verdict.index}"
        )
    steps = steps_of(code)
    wiring = []
    for i, lev in enumerate(code):
        kind = {1: "down", -1: "up", 0: "same"}[steps[i]]
        primary = i - 1 if i > 0 else STEM
        secondary: int | None = None
        if kind == "up":
            down_at = next(
                j for j in range(len(code)) if steps[j] == 1 and code[j] == lev + 1
            )
            secondary = down_at - 1 if down_at > 0 else STEM
        elif i >= 2 and code[i - 2] == lev:
            secondary = i - 2
        wiring.append(CellWiring(kind=kind, primary=primary, secondary=secondary))
    return tuple(wiring)


def code_distance(a: Code, b: Code) -> float:
    """Euclidean distance between two level vectors."""
    if len(a) != len(b):
        raise StructuralError(f"code lengths differ: {len(a)} vs {len(b)}")
    return math.dist(a, b)


def space_extremes(spec: SpaceSpec) -> tuple[Code, Code]:
    """The latest-transition (level-0-adjacent) and earliest-transition codes."""
    n, d, u = spec.num_cells, spec.num_down, spec.num_up
    lo: list[int] = [0] * (n - d - u)
    lev = 0
    for _ in range(d):
        lev += 1
        lo.append(lev)
    for _ in range(u):
        lev -= 1
        lo.append(lev)
    hi: list[int] = []
    lev = 0
    for _ in range(d):
        lev += 1
        hi.append(lev)
    hi.extend([lev] * (n - d - u))
    for _ in range(u):
        lev -= 1
        hi.append(lev)
    return tuple(lo), tuple(hi)


def code_span(spec: SpaceSpec) -> float:
    """Distance between the space extremes; normalizer for similarity scores."""
    lo, hi = space_extremes(spec)
    return code_distance(lo, hi)

"""Cyclic bilateral interaction between the language vector and the
three fused visual levels.

One round per level: the vision-to-language update attends over all
positions of that level's fused map and renormalizes the language
vector; the language-to-vision update then adds sigmoid-gated copies of
the *other* levels' round-m maps onto the level's own map. Updates
within a round are synchronous: every gated aggregation reads the maps
from the previous round, never a sibling's fresh output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import init
from .tensor import (
    Tensor,
    add,
    concat,
    l2_normalize,
    matmul,
    mul,
    reshape,
    sigmoid,
    softmax,
    transpose2d,
)

LEVELS = (3, 4, 5)


@dataclass
class CimState:
    """Per-level language vectors and fused maps after the last round."""

    lang: dict  # level -> Tensor (C_l,)
    fused: dict  # level -> Tensor (H, W, C_v)
    rounds_done: int


class Vlm:
    """Vision-guided language update.

    Scores every spatial position against the projected language vector
    (scaled dot-product over a shared width C), pools the fused map with
    the resulting attention row, and merges pooled context with the old
    language vector through a 1x1 projection plus L2 normalization.
    """

    def __init__(self, c_l: int, c_v: int, attn_width: int | None = None, rng=None,
                 dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        c = attn_width or c_v
        self.attn_width = c
        self.w_theta = init.glorot(rng, (c_l, c), c_l, c, dtype)
        self.b_theta = init.zeros((c,), dtype)
        self.w_phi = init.glorot(rng, (c_v, c), c_v, c, dtype)
        self.b_phi = init.zeros((c,), dtype)
        self.w_out = init.glorot(rng, (c_l + c_v, c_l), c_l + c_v, c_l, dtype)
        self.b_out = init.zeros((c_l,), dtype)

    def forward(self, lang: Tensor, fused: Tensor, return_attention: bool = False):
        h, w, c_v = fused.shape
        hw = h * w
        flat = reshape(fused, (hw, c_v))
        phi = add(matmul(flat, self.w_phi), self.b_phi)  # (HW, C)
        theta = add(matmul(reshape(lang, (1, lang.size)), self.w_theta), self.b_theta)
        scores = matmul(phi, transpose2d(theta))  # (HW, 1)
        attn = softmax(reshape(scores, (hw,)), scale=float(np.sqrt(self.attn_width)))
        pooled = matmul(reshape(attn, (1, hw)), flat)  # (1, C_v)
        merged = concat([reshape(lang, (1, lang.size)), pooled], axis=1)
        out = add(matmul(merged, self.w_out), self.b_out)
        out = l2_normalize(reshape(out, (out.size,)))
        return (out, attn) if return_attention else out

    def parameters(self):
        for name in ("w_theta", "b_theta", "w_phi", "b_phi", "w_out", "b_out"):
            yield name, getattr(self, name)


class Lvm:
    """Language-gated residual aggregation of the other levels' maps.

    One (weight, bias) gate projection per source level; the gate is a
    per-channel sigmoid broadcast over all spatial positions.
    """

    def __init__(self, target: int, c_l: int, c_v: int, sources=None, rng=None,
                 dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        sources = tuple(sources) if sources is not None else tuple(
            l for l in LEVELS if l != target
        )
        if target in sources:
            raise ValueError(f"level index collision: target {target} also a source")
        if len(set(sources)) != len(sources):
            raise ValueError(f"duplicate source levels {sources}")
        self.target = target
        self.sources = sources
        self.gates = {
            src: (init.glorot(rng, (c_l, c_v), c_l, c_v, dtype), init.zeros((c_v,), dtype))
            for src in sources
        }

    def forward(self, lang: Tensor, feats: dict) -> Tensor:
        """feats maps level -> (H, W, C_v) and must cover the target and
        every source; all maps are the previous round's."""
        missing = {self.target, *self.sources} - set(feats)
        if missing:
            raise ValueError(f"missing fused maps for levels {sorted(missing)}")
        out = feats[self.target]
        c_v = out.shape[2]
        row = reshape(lang, (1, lang.size))
        for src in self.sources:
            w, b = self.gates[src]
            gate = sigmoid(add(matmul(row, w), b))  # (1, C_v)
            out = add(out, mul(reshape(gate, (1, 1, c_v)), feats[src]))
        return out

    def parameters(self):
        for src in self.sources:
            w, b = self.gates[src]
            yield f"gate{src}.w", w
            yield f"gate{src}.b", b


class Cim:
    """The full schedule: ``rounds`` bilateral updates per cycle, with
    unshared parameters per (level, round); cycles reuse them."""

    def __init__(self, c_l: int, c_v: int, rounds: int = 2, attn_width: int | None = None,
                 rng=None, dtype=np.float64):
        if rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {rounds}")
        rng = rng or np.random.default_rng(0)
        self.rounds = rounds
        self.vlm = {
            i: [Vlm(c_l, c_v, attn_width, rng=rng, dtype=dtype) for _ in range(rounds)]
            for i in LEVELS
        }
        self.lvm = {
            i: [Lvm(i, c_l, c_v, rng=rng, dtype=dtype) for _ in range(rounds)]
            for i in LEVELS
        }

    def forward(self, lang0: Tensor, fused0: dict, cycles: int = 1) -> CimState:
        """All three levels start from the same language vector and evolve
        independently; cycle n+1 consumes cycle n's outputs."""
        if cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {cycles}")
        if sorted(fused0) != list(LEVELS):
            raise ValueError(f"fused maps must cover levels {LEVELS}, got {sorted(fused0)}")
        lang = {i: lang0 for i in LEVELS}
        fused = dict(fused0)
        for _ in range(cycles):
            for m in range(self.rounds):
                new_lang = {i: self.vlm[i][m].forward(lang[i], fused[i]) for i in LEVELS}
                new_fused = {i: self.lvm[i][m].forward(new_lang[i], fused) for i in LEVELS}
                lang, fused = new_lang, new_fused
        return CimState(lang=lang, fused=fused, rounds_done=cycles * self.rounds)

    def parameters(self):
        for i in LEVELS:
            for m in range(self.rounds):
                for name, t in self.vlm[i][m].parameters():
                    yield f"vlm{i}.r{m}.{name}", t
                for name, t in self.lvm[i][m].parameters():
                    yield f"lvm{i}.r{m}.{name}", t

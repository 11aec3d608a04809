"""Segmentation head: multi-level concat, atrous spatial pyramid pooling,
1x1 mask projection, full-resolution upsampling, and the training loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import init
from .convops import bilinear_upsample, depthwise_separable_conv, global_avg_pool
from .tensor import (
    ShapeError,
    Tensor,
    add,
    bce_with_logits_sum,
    concat,
    matmul,
    reshape,
    sigmoid,
)

ASPP_DILATIONS = (1, 3, 7, 11)


def conv1x1(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Position-wise linear map: (H, W, Cin) x (Cin, Cout)."""
    h, wd, c = x.shape
    out = matmul(reshape(x, (h * wd, c)), w)
    if b is not None:
        out = add(out, b)
    return reshape(out, (h, wd, w.shape[1]))


def concat_levels(f3: Tensor, f4: Tensor, f5: Tensor) -> Tensor:
    """Channel concatenation in level order 3, 4, 5."""
    if not (f3.shape == f4.shape == f5.shape):
        raise ShapeError(f"level shapes differ: {f3.shape}, {f4.shape}, {f5.shape}")
    return concat([f3, f4, f5], axis=2)


class Aspp:
    """Five parallel context branches fused by a 1x1 conv.

    Branch 1 pools globally, projects, and broadcasts back to the grid;
    branches 2..5 are depthwise-separable 3x3 convs at dilations
    {1, 3, 7, 11}. Every branch emits ``c_out`` channels.
    """

    def __init__(self, c_in: int, c_out: int = 64, rng=None, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        self.gap_w = init.glorot(rng, (c_in, c_out), c_in, c_out, dtype)
        self.gap_b = init.zeros((c_out,), dtype)
        self.branches = {}
        for d in ASPP_DILATIONS:
            self.branches[d] = (
                init.glorot(rng, (3, 3, c_in), 9 * c_in, 9 * c_in, dtype),
                init.glorot(rng, (1, 1, c_in, c_out), c_in, c_out, dtype),
                init.zeros((c_out,), dtype),
            )
        self.fuse_w = init.glorot(rng, (5 * c_out, c_out), 5 * c_out, c_out, dtype)
        self.fuse_b = init.zeros((c_out,), dtype)

    def forward(self, x: Tensor) -> Tensor:
        h, w, _ = x.shape
        pooled = conv1x1(global_avg_pool(x), self.gap_w, self.gap_b)
        outs = [bilinear_upsample(pooled, h, w)]
        for d in ASPP_DILATIONS:
            dw, pw, pb = self.branches[d]
            outs.append(depthwise_separable_conv(x, dw, pw, dilation=d, bias=pb))
        return conv1x1(concat(outs, axis=2), self.fuse_w, self.fuse_b)

    def parameters(self):
        yield "gap.w", self.gap_w
        yield "gap.b", self.gap_b
        for d in ASPP_DILATIONS:
            dw, pw, pb = self.branches[d]
            yield f"d{d}.depthwise", dw
            yield f"d{d}.pointwise", pw
            yield f"d{d}.bias", pb
        yield "fuse.w", self.fuse_w
        yield "fuse.b", self.fuse_b


@dataclass
class MaskPrediction:
    """Full-resolution mask logits and their sigmoid probabilities."""

    logits: Tensor  # (H_img, W_img)
    probs: Tensor  # sigmoid(logits), same shape

    @property
    def prob_map(self) -> np.ndarray:
        return self.probs.data


class SegHead:
    """concat levels -> ASPP -> 1x1 to one channel -> bilinear upsample."""

    def __init__(self, c_in: int, c_a: int = 64, rng=None, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        self.aspp = Aspp(c_in, c_a, rng=rng, dtype=dtype)
        self.mask_w = init.glorot(rng, (c_a, 1), c_a, 1, dtype)
        self.mask_b = init.zeros((1,), dtype)

    def predict_mask(self, aspp_out: Tensor, image_size) -> MaskPrediction:
        h_img, w_img = image_size
        logit_map = conv1x1(aspp_out, self.mask_w, self.mask_b)
        logits = reshape(bilinear_upsample(logit_map, h_img, w_img), (h_img, w_img))
        return MaskPrediction(logits=logits, probs=sigmoid(logits))

    def forward(self, f3: Tensor, f4: Tensor, f5: Tensor, image_size) -> MaskPrediction:
        return self.predict_mask(self.aspp.forward(concat_levels(f3, f4, f5)), image_size)

    def parameters(self):
        for name, t in self.aspp.parameters():
            yield f"aspp.{name}", t
        yield "mask.w", self.mask_w
        yield "mask.b", self.mask_b


def bce_loss(pred: MaskPrediction, gt: np.ndarray) -> Tensor:
    """Sum-reduced sigmoid binary cross entropy against a {0,1} mask.

    Computed from logits in the stable log-sum-exp form; equals the naive
    clamped -sum(G log p + (1-G) log(1-p)) to well under 1e-6.
    """
    gt = np.asarray(gt)
    if gt.shape != pred.logits.shape:
        raise ShapeError(f"mask shape {gt.shape} != prediction shape {pred.logits.shape}")
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("ground-truth mask must be binary")
    return bce_with_logits_sum(pred.logits, gt.astype(pred.logits.dtype))

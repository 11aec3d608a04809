"""The full phrase-conditioned segmentation network.

Pipeline per sample: visual pyramid + pooled phrase vector -> per-level
bilinear fusion with the coordinate grid -> cyclic bilateral interaction
-> multi-scale segmentation head at input resolution.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .cim import Cim, CimState
from .encoders import PhraseEncoder, PhraseSet, VisualEncoder
from .fusion import BilinearFusion, build_initial_fused
from .seghead import MaskPrediction, SegHead, bce_loss
from .tensor import Tensor


@dataclass
class ModelConfig:
    feat_h: int = 10
    feat_w: int = 10
    c_i: int = 32  # projected visual channels per level
    c_l: int = 32  # language feature width
    c_f: int = 32  # fused channels before the 8 coordinate channels
    c_a: int = 64  # head channels
    rank: int = 16  # bilinear pooling rank
    n_phrases: int = 4
    rounds: int = 2
    cycles: int = 1
    backbone_channels: tuple = (8, 16, 32, 32, 32)
    attn_width: int | None = None  # defaults to c_v
    fuse_tanh: bool = True
    dtype: str = "float64"

    @property
    def c_v(self) -> int:
        # fused width seen by the interaction rounds: bilinear output + 8 coords
        return self.c_f + 8

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "backbone_channels" in d:
            d["backbone_channels"] = tuple(d["backbone_channels"])
        return cls(**d)


class CbceNet:
    """Cyclic bilateral consistency-enhancement network at desk scale."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, rng=None):
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        dt = cfg.np_dtype
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.encoder = VisualEncoder(
            stage_channels=cfg.backbone_channels,
            c_out=cfg.c_i,
            feat_h=cfg.feat_h,
            feat_w=cfg.feat_w,
            rng=rng,
            dtype=dt,
        )
        self.phrase_encoder = PhraseEncoder(vocab_size, cfg.c_l, rng=rng, dtype=dt)
        self.fusers = {
            i: BilinearFusion(cfg.c_i, cfg.c_l, cfg.c_f, cfg.rank, cfg.fuse_tanh, rng=rng, dtype=dt)
            for i in (3, 4, 5)
        }
        self.cim = Cim(cfg.c_l, cfg.c_v, rounds=cfg.rounds, attn_width=cfg.attn_width,
                       rng=rng, dtype=dt)
        self.head = SegHead(3 * cfg.c_v, cfg.c_a, rng=rng, dtype=dt)

    def forward(self, image: np.ndarray, phrases: PhraseSet) -> MaskPrediction:
        """image: (H, W, 3) float array in [0, 1]."""
        image = np.asarray(image, dtype=self.cfg.np_dtype)
        if image.min() < 0.0 or image.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        img_t = Tensor(image)
        pyramid = self.encoder.forward(img_t)
        lang0 = self.phrase_encoder.forward(phrases)
        fused0 = build_initial_fused(pyramid, lang0, self.fusers)
        state: CimState = self.cim.forward(lang0, fused0, cycles=self.cfg.cycles)
        return self.head.forward(
            state.fused[3], state.fused[4], state.fused[5], image.shape[:2]
        )

    def loss(self, image: np.ndarray, phrases: PhraseSet, mask: np.ndarray) -> Tensor:
        return bce_loss(self.forward(image, phrases), mask)

    def parameters(self) -> dict:
        out = {}
        for name, t in self.encoder.parameters():
            out[f"encoder.{name}"] = t
        for name, t in self.phrase_encoder.parameters():
            out[f"phrases.{name}"] = t
        for i in (3, 4, 5):
            for name, t in self.fusers[i].parameters():
                out[f"fuse{i}.{name}"] = t
        for name, t in self.cim.parameters():
            out[f"cim.{name}"] = t
        for name, t in self.head.parameters():
            out[f"head.{name}"] = t
        return out

    def trainable_parameters(self, freeze_backbone: bool = False) -> dict:
        params = self.parameters()
        if freeze_backbone:
            params = {k: v for k, v in params.items() if not k.startswith("encoder.stage")}
        return params

    def load_state(self, arrays: dict) -> None:
        """Overwrite parameter buffers from name -> array, shape-checked."""
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in params.items():
            arr = np.asarray(arrays[name], dtype=t.dtype)
            if arr.shape != t.shape:
                raise ValueError(
                    f"checkpoint/config dimension mismatch for {name}: {arr.shape} vs {t.shape}"
                )
            t.data = arr.copy()

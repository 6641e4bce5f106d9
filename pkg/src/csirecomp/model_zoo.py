"""Recomposition models: multimodal and single-modal encoder-decoders.

Three kinds share one CSI decoder:

* ``mmi``       feedback-matrix encoder + image encoder, feature maps
                concatenated on the channel axis,
* ``smi-bfm``   feedback-matrix encoder only,
* ``smi-image`` image encoder only.

The feedback encoder convolves along the subcarrier axis exclusively
(kernel size 1 on the element axis), the image encoder is a plain conv
stack whose output is bilinearly resized to the feedback encoder's output
shape, and the decoder upsamples back to full subcarrier resolution before
a per-subcarrier linear map widens the element axis from F_b to F_h.
Every convolution keeps spatial size (same padding) and uses ReLU except
the last one, which is linear.

A ModelSpec is a backend-independent layer list with exact shape
semantics and a closed-form parameter count; the runnable network is a
torch module instantiated from it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn

MODEL_KINDS = ("mmi", "smi-bfm", "smi-image")


@dataclass
class LayerSpec:
    """One layer of the graph; unused fields stay None."""

    kind: str  # conv2d | maxpool2d | batchnorm | upsample2d | resize | concat | element_linear
    kernel: Optional[Tuple[int, int]] = None
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    activation: Optional[str] = None       # relu | linear (conv2d only)
    padding: Optional[str] = None          # conv2d keeps spatial size ("same")
    scale: Optional[Tuple[int, int]] = None  # upsample2d
    target_hw: Optional[Tuple[int, int]] = None  # resize
    in_features: Optional[int] = None      # element_linear
    out_features: Optional[int] = None

    def param_count(self) -> int:
        if self.kind == "conv2d":
            kh, kw = self.kernel
            return kh * kw * self.in_channels * self.out_channels + self.out_channels
        if self.kind == "batchnorm":
            return 2 * self.in_channels
        if self.kind == "element_linear":
            return self.in_features * self.out_features + self.out_features
        return 0


@dataclass
class ModelSpec:
    """Architecture description: two encoder branches plus the decoder."""

    kind: str
    k: int
    f_b: int
    f_h: int
    image_hw: Tuple[int, int]
    bfm_encoder: List[LayerSpec] = field(default_factory=list)
    image_encoder: List[LayerSpec] = field(default_factory=list)
    decoder: List[LayerSpec] = field(default_factory=list)

    @property
    def parameter_count(self) -> int:
        return count_params(self)

    @property
    def encoder_output_shape(self) -> Tuple[int, int, int]:
        """(K/4, F_b, channels) feature shape entering the decoder branch merge."""
        return (self.k // 4, self.f_b, 32)

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelSpec":
        def layers(items):
            out = []
            for item in items:
                item = dict(item)
                for key in ("kernel", "scale", "target_hw"):
                    if item.get(key) is not None:
                        item[key] = tuple(item[key])
                out.append(LayerSpec(**item))
            return out

        return cls(
            kind=d["kind"],
            k=d["k"],
            f_b=d["f_b"],
            f_h=d["f_h"],
            image_hw=tuple(d["image_hw"]),
            bfm_encoder=layers(d["bfm_encoder"]),
            image_encoder=layers(d["image_encoder"]),
            decoder=layers(d["decoder"]),
        )


def _conv(in_ch, out_ch, kernel, activation="relu"):
    return LayerSpec(
        kind="conv2d", kernel=kernel, in_channels=in_ch, out_channels=out_ch,
        activation=activation, padding="same",
    )


def _bn(ch):
    return LayerSpec(kind="batchnorm", in_channels=ch, out_channels=ch)


def build_model(kind: str, config: Dict[str, int]) -> ModelSpec:
    """Default layer graph for a model kind.

    config must provide K, F_b, F_h, h, w. K must be divisible by 4 (two
    pool/upsample stages along the subcarrier axis) and the image sides by
    8 (three pooling stages); violations name the offending dimension.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}, expected one of {MODEL_KINDS}")
    k, f_b, f_h = config["K"], config["F_b"], config["F_h"]
    h, w = config["h"], config["w"]
    if k % 4 != 0:
        raise ValueError(f"K={k} is not divisible by 4 (subcarrier pooling)")
    uses_image = kind in ("mmi", "smi-image")
    if uses_image:
        if h % 8 != 0:
            raise ValueError(f"h={h} is not divisible by 8 (image pooling)")
        if w % 8 != 0:
            raise ValueError(f"w={w} is not divisible by 8 (image pooling)")

    bfm_encoder = []
    if kind in ("mmi", "smi-bfm"):
        bfm_encoder = [
            _conv(2, 16, (3, 1)),
            _bn(16),
            LayerSpec(kind="maxpool2d", kernel=(2, 1)),
            _conv(16, 32, (3, 1)),
            _bn(32),
            LayerSpec(kind="maxpool2d", kernel=(2, 1)),
        ]

    image_encoder = []
    if uses_image:
        chans = (16, 32, 32)
        in_ch = 3
        for ch in chans:
            image_encoder += [
                _conv(in_ch, ch, (3, 3)),
                _bn(ch),
                LayerSpec(kind="maxpool2d", kernel=(2, 2)),
            ]
            in_ch = ch
        image_encoder.append(LayerSpec(kind="resize", target_hw=(k // 4, f_b)))

    decoder: List[LayerSpec] = []
    dec_in = 32
    if kind == "mmi":
        decoder.append(LayerSpec(kind="concat", in_channels=64, out_channels=64))
        dec_in = 64
    decoder += [
        _conv(dec_in, 64, (3, 3)),
        _bn(64),
        LayerSpec(kind="upsample2d", scale=(2, 1)),
        _conv(64, 32, (3, 1)),
        _bn(32),
        LayerSpec(kind="upsample2d", scale=(2, 1)),
        _conv(32, 1, (3, 1), activation="linear"),
        LayerSpec(kind="element_linear", in_features=f_b, out_features=f_h),
    ]

    return ModelSpec(
        kind=kind, k=k, f_b=f_b, f_h=f_h, image_hw=(h, w),
        bfm_encoder=bfm_encoder, image_encoder=image_encoder, decoder=decoder,
    )


def count_params(spec: ModelSpec) -> int:
    """Exact trainable-parameter count (batchnorm scale/shift included)."""
    layers = spec.bfm_encoder + spec.image_encoder + spec.decoder
    return sum(layer.param_count() for layer in layers)


class _Branch(nn.Module):
    """Sequential stack built from LayerSpecs (encoder or decoder)."""

    def __init__(self, layers: List[LayerSpec]):
        super().__init__()
        mods = []
        for spec in layers:
            if spec.kind == "conv2d":
                kh, kw = spec.kernel
                mods.append(
                    nn.Conv2d(
                        spec.in_channels, spec.out_channels, (kh, kw),
                        padding=(kh // 2, kw // 2),
                    )
                )
                if spec.activation == "relu":
                    mods.append(nn.ReLU())
            elif spec.kind == "batchnorm":
                # spec order is conv -> bn -> relu; insert before the relu
                if mods and isinstance(mods[-1], nn.ReLU):
                    mods.insert(len(mods) - 1, nn.BatchNorm2d(spec.in_channels))
                else:
                    mods.append(nn.BatchNorm2d(spec.in_channels))
            elif spec.kind == "maxpool2d":
                mods.append(nn.MaxPool2d(spec.kernel))
            elif spec.kind == "upsample2d":
                mods.append(nn.Upsample(scale_factor=spec.scale, mode="nearest"))
            elif spec.kind == "resize":
                mods.append(_Resize(spec.target_hw))
            elif spec.kind == "concat":
                continue  # handled by the parent module
            elif spec.kind == "element_linear":
                mods.append(_ElementLinear(spec.in_features, spec.out_features))
            else:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
        self.stack = nn.Sequential(*mods)

    def forward(self, x):
        return self.stack(x)


class _Resize(nn.Module):
    def __init__(self, target_hw):
        super().__init__()
        self.target_hw = tuple(target_hw)

    def forward(self, x):
        return nn.functional.interpolate(
            x, size=self.target_hw, mode="bilinear", align_corners=False
        )


class _ElementLinear(nn.Module):
    """Linear map over the element axis, shared across subcarriers."""

    def __init__(self, in_features, out_features):
        super().__init__()
        self.linear = nn.Linear(in_features, out_features)

    def forward(self, x):
        # (B, 1, K, F_b) -> (B, 1, K, F_h)
        return self.linear(x)


class RecompositionNet(nn.Module):
    """Runnable network for a ModelSpec.

    Inputs are channel-first: bfm (B, 2, K, F_b), image (B, 3, h, w);
    output is (B, 1, K, F_h).
    """

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.bfm_encoder = _Branch(spec.bfm_encoder) if spec.bfm_encoder else None
        self.image_encoder = _Branch(spec.image_encoder) if spec.image_encoder else None
        self.decoder = _Branch(spec.decoder)

    def forward(self, bfm=None, image=None):
        feats = []
        if self.bfm_encoder is not None:
            if bfm is None:
                raise ValueError(f"{self.spec.kind} model requires the feedback-matrix input")
            feats.append(self.bfm_encoder(bfm))
        if self.image_encoder is not None:
            if image is None:
                raise ValueError(f"{self.spec.kind} model requires the image input")
            feats.append(self.image_encoder(image))
        merged = feats[0] if len(feats) == 1 else torch.cat(feats, dim=1)
        return self.decoder(merged)


@dataclass
class ModelParams:
    """Instantiated network plus the seed that initialized it."""

    spec: ModelSpec
    seed: int
    module: RecompositionNet


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Deterministically initialized parameters for a spec.

    Torch's default init is fan-in-scaled uniform; seeding the global
    generator right before construction makes it reproducible.
    """
    torch.manual_seed(seed)
    module = RecompositionNet(spec)
    actual = sum(p.numel() for p in module.parameters() if p.requires_grad)
    expected = count_params(spec)
    if actual != expected:
        raise AssertionError(
            f"parameter count mismatch: spec says {expected}, module has {actual}"
        )
    return ModelParams(spec=spec, seed=seed, module=module)


def _as_batch(arr: np.ndarray, ndim_single: int, name: str) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(arr)
    if arr.ndim == ndim_single:
        return arr[None], True
    if arr.ndim == ndim_single + 1:
        return arr, False
    raise ValueError(f"{name}: expected {ndim_single} or {ndim_single + 1} axes, got {arr.ndim}")


def forward(
    params: ModelParams,
    bfm_features: Optional[np.ndarray] = None,
    image: Optional[np.ndarray] = None,
    mode: str = "eval",
) -> np.ndarray:
    """Run the network on numpy records; returns (K, F_h, 1) or a batch of them.

    bfm_features: (K, F_b, 2); image: (h, w, 3) in [0, 1]. In eval mode
    batchnorm uses running statistics and the call is a pure function of
    (params, input).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    spec = params.spec
    module = params.module
    single = None

    bfm_t = None
    if spec.bfm_encoder:
        if bfm_features is None:
            raise ValueError(f"{spec.kind} model requires bfm_features")
        batch, single = _as_batch(bfm_features, 3, "bfm_features")
        if batch.shape[1:] != (spec.k, spec.f_b, 2):
            raise ValueError(
                f"bfm_features shape {batch.shape[1:]} does not match spec "
                f"(K={spec.k}, F_b={spec.f_b}, 2)"
            )
        bfm_t = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32)).permute(0, 3, 1, 2)

    img_t = None
    if spec.image_encoder:
        if image is None:
            raise ValueError(f"{spec.kind} model requires an image")
        batch, was_single = _as_batch(image, 3, "image")
        if single is None:
            single = was_single
        if batch.shape[1:] != (*spec.image_hw, 3):
            raise ValueError(
                f"image shape {batch.shape[1:]} does not match spec (h, w, 3)="
                f"{(*spec.image_hw, 3)}"
            )
        img_t = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32)).permute(0, 3, 1, 2)

    if bfm_t is not None and img_t is not None and bfm_t.shape[0] != img_t.shape[0]:
        raise ValueError(
            f"batch axis mismatch: {bfm_t.shape[0]} feedback records vs {img_t.shape[0]} images"
        )

    was_training = module.training
    module.train(mode == "train")
    try:
        with torch.no_grad():
            out = module(bfm=bfm_t, image=img_t)
    finally:
        module.train(was_training)
    result = out.permute(0, 2, 3, 1).numpy()  # (B, K, F_h, 1)
    return result[0] if single else result

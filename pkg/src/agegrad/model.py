"""ConvNeXt, ViT, and hybrid ConvNeXt-Transformer age regressors.

A model is a ModelSpec plus a ParamStore of named tensors; the forward
functions here are pure compositions of tensor ops, so gradients come from
the tape. ``parameter_shapes`` is the single source of truth for parameter
names and shapes: initialization, parameter counting, and checkpoint
validation all derive from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, ShapeError
from .tensor import (
    Tensor,
    add,
    conv2d,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    reshape,
    softmax,
    transpose,
)

VARIANTS = ("convnext", "vit", "hybrid")
BRIDGE_MODES = ("learnable", "reshape")
HEAD_HIDDEN_CHOICES = (32, 64, 128, 192, 256)
PATCH_SIZE = 16
LAYER_NORM_EPS = 1e-5
LAYER_SCALE_INIT = 1e-6
INIT_STD = 0.02


@dataclass
class ModelSpec:
    variant: str = "hybrid"
    input_size: int = 224
    stage_depths: tuple = (3, 3, 9, 3)
    stage_dims: tuple = (96, 192, 384, 768)
    encoder_blocks: int = 12
    token_dim: int = 192
    token_count: int = 196
    num_heads: int = 3
    head_layers: int = 2
    head_hidden: int = 256
    bridge_mode: str = "learnable"
    use_layer_scale: bool = True
    positional_embedding: bool = True

    def __post_init__(self):
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        self.stage_dims = tuple(int(d) for d in self.stage_dims)

    @property
    def backbone_grid(self) -> int:
        # stem /4 plus three /2 downsamples
        return self.input_size // 32

    @property
    def bridge_split(self) -> int:
        return self.stage_dims[3] // self.token_dim

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {self.variant!r}")
        if len(self.stage_depths) != 4 or len(self.stage_dims) != 4:
            raise ConfigError("stage_depths and stage_dims must each have 4 entries")
        if any(d < 1 for d in self.stage_depths) or any(d < 1 for d in self.stage_dims):
            raise ConfigError("stage depths and dims must be positive")
        if self.head_layers not in (1, 2):
            raise ConfigError(f"head_layers must be 1 or 2, got {self.head_layers}")
        if self.head_layers == 2 and self.head_hidden not in HEAD_HIDDEN_CHOICES:
            raise ConfigError(
                f"head_hidden must be one of {HEAD_HIDDEN_CHOICES}, got {self.head_hidden}"
            )
        if self.variant in ("hybrid", "vit"):
            if self.token_dim % self.num_heads != 0:
                raise ConfigError(
                    f"token_dim {self.token_dim} not divisible by num_heads {self.num_heads}"
                )
            if self.encoder_blocks < 1:
                raise ConfigError("encoder_blocks must be >= 1")
        if self.variant in ("hybrid", "convnext"):
            if self.input_size % 32 != 0 or self.backbone_grid < 1:
                raise ConfigError(
                    f"input_size {self.input_size} must be a positive multiple of 32"
                )
        if self.variant == "hybrid":
            grid = self.backbone_grid
            cb = self.stage_dims[3]
            if cb % self.token_dim != 0:
                raise ConfigError(
                    f"backbone dim {cb} not divisible by token_dim {self.token_dim}"
                )
            if self.token_count * self.token_dim != cb * grid * grid:
                raise ConfigError(
                    f"token grid mismatch: {self.token_count}x{self.token_dim} != "
                    f"{cb}x{grid}x{grid}"
                )
        if self.variant == "vit":
            if self.input_size % PATCH_SIZE != 0:
                raise ConfigError(
                    f"input_size {self.input_size} must be a multiple of {PATCH_SIZE} for vit"
                )
            patches = (self.input_size // PATCH_SIZE) ** 2
            if self.token_count != patches:
                raise ConfigError(
                    f"token_count {self.token_count} must equal {patches} for {self.input_size} input"
                )


class ParamStore:
    """Ordered map from dotted parameter name to Tensor."""

    def __init__(self):
        self.entries: dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.entries[name]
        except KeyError:
            raise ConfigError(f"missing model parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self.entries:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self.entries[name] = tensor

    def names(self) -> list[str]:
        return list(self.entries)

    def zero_grad(self) -> None:
        for t in self.entries.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradient per parameter; parameters off the loss path get zeros."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.entries.items()
        }

    def total_parameters(self) -> int:
        return sum(t.size for t in self.entries.values())

    def astype(self, dtype) -> "ParamStore":
        clone = ParamStore()
        for name, t in self.entries.items():
            clone.add(name, Tensor(t.data.astype(dtype), requires_grad=t.requires_grad))
        return clone


def parameter_shapes(spec: ModelSpec) -> dict[str, tuple]:
    """Every parameter name and shape for a spec, in construction order."""
    spec.validate()
    shapes: dict[str, tuple] = {}

    def linear(prefix: str, din: int, dout: int) -> None:
        shapes[f"{prefix}.weight"] = (din, dout)
        shapes[f"{prefix}.bias"] = (dout,)

    def norm(prefix: str, dim: int) -> None:
        shapes[f"{prefix}.gamma"] = (dim,)
        shapes[f"{prefix}.beta"] = (dim,)

    dims = spec.stage_dims
    if spec.variant in ("convnext", "hybrid"):
        shapes["backbone.stem.conv.kernel"] = (dims[0], 3, 4, 4)
        shapes["backbone.stem.conv.bias"] = (dims[0],)
        norm("backbone.stem.norm", dims[0])
        for s in range(4):
            if s > 0:
                norm(f"backbone.down{s}.norm", dims[s - 1])
                shapes[f"backbone.down{s}.conv.kernel"] = (dims[s], dims[s - 1], 2, 2)
                shapes[f"backbone.down{s}.conv.bias"] = (dims[s],)
            for b in range(spec.stage_depths[s]):
                pre = f"backbone.stage{s}.block{b}"
                shapes[f"{pre}.dwconv.kernel"] = (dims[s], 1, 7, 7)
                shapes[f"{pre}.dwconv.bias"] = (dims[s],)
                norm(f"{pre}.norm", dims[s])
                shapes[f"{pre}.pw1.kernel"] = (4 * dims[s], dims[s], 1, 1)
                shapes[f"{pre}.pw1.bias"] = (4 * dims[s],)
                shapes[f"{pre}.pw2.kernel"] = (dims[s], 4 * dims[s], 1, 1)
                shapes[f"{pre}.pw2.bias"] = (dims[s],)
                if spec.use_layer_scale:
                    shapes[f"{pre}.layerscale.gamma"] = (dims[s],)

    if spec.variant == "hybrid":
        if spec.bridge_mode == "learnable":
            linear("bridge.proj", dims[3], dims[3])
        elif spec.bridge_mode != "reshape":
            raise ConfigError(f"unknown bridge_mode {spec.bridge_mode!r}")
        if spec.positional_embedding:
            shapes["bridge.pos.embedding"] = (spec.token_count, spec.token_dim)
    if spec.variant == "vit":
        linear("embed.proj", 3 * PATCH_SIZE * PATCH_SIZE, spec.token_dim)
        if spec.positional_embedding:
            shapes["embed.pos.embedding"] = (spec.token_count, spec.token_dim)

    if spec.variant in ("vit", "hybrid"):
        d = spec.token_dim
        for i in range(spec.encoder_blocks):
            pre = f"encoder.block{i}"
            norm(f"{pre}.attn.norm", d)
            for proj in ("q", "k", "v", "out"):
                linear(f"{pre}.attn.{proj}", d, d)
            norm(f"{pre}.ffn.norm", d)
            linear(f"{pre}.ffn.fc1", d, 4 * d)
            linear(f"{pre}.ffn.fc2", 4 * d, d)
        norm("encoder.norm", d)

    head_in = spec.token_dim if spec.variant in ("vit", "hybrid") else dims[3]
    if spec.head_layers == 1:
        linear("head.fc", head_in, 1)
    else:
        linear("head.fc1", head_in, spec.head_hidden)
        linear("head.fc2", spec.head_hidden, 1)
    return shapes


def _truncated_normal(rng: np.random.Generator, shape: tuple, std: float) -> np.ndarray:
    # inverse-CDF sampling truncated at +/- 2 sigma; deterministic per generator state
    lo, hi = 0.022750131948179195, 0.9772498680518208
    u = rng.uniform(lo, hi, size=shape)
    return (ndtri(u) * std).astype(np.float32)


def init_params(spec: ModelSpec, seed: int) -> ParamStore:
    """Deterministic parameter initialization for a spec."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    params = ParamStore()
    for name, shape in parameter_shapes(spec).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "bias" or leaf == "beta":
            data = np.zeros(shape, dtype=np.float32)
        elif name.endswith("layerscale.gamma"):
            data = np.full(shape, LAYER_SCALE_INIT, dtype=np.float32)
        elif leaf == "gamma":
            data = np.ones(shape, dtype=np.float32)
        else:
            data = _truncated_normal(rng, shape, INIT_STD)
        params.add(name, Tensor(data, requires_grad=True))
    return params


def count_parameters(spec: ModelSpec, params: ParamStore) -> int:
    """Total element count; verifies the store matches the spec's layout."""
    expected = parameter_shapes(spec)
    if list(expected) != params.names():
        raise ConfigError("parameter store does not match the spec's parameter layout")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(
                f"parameter {name} has shape {params[name].shape}, spec expects {shape}"
            )
    return params.total_parameters()


def _linear(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    return add(matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def _channels_last_norm(x: Tensor, params: ParamStore, prefix: str, dim: int) -> Tensor:
    """LayerNorm over the channel axis of an NCHW tensor."""
    y = transpose(x, (0, 2, 3, 1))
    y = layer_norm(y, dim, params[f"{prefix}.gamma"], params[f"{prefix}.beta"], LAYER_NORM_EPS)
    return transpose(y, (0, 3, 1, 2))


def convnext_block_forward(x: Tensor, params: ParamStore, prefix: str, spec: ModelSpec) -> Tensor:
    dim = x.shape[1]
    y = conv2d(
        x,
        params[f"{prefix}.dwconv.kernel"],
        params[f"{prefix}.dwconv.bias"],
        stride=1,
        padding=3,
        groups=dim,
    )
    y = _channels_last_norm(y, params, f"{prefix}.norm", dim)
    y = conv2d(y, params[f"{prefix}.pw1.kernel"], params[f"{prefix}.pw1.bias"])
    y = gelu(y)
    y = conv2d(y, params[f"{prefix}.pw2.kernel"], params[f"{prefix}.pw2.bias"])
    if spec.use_layer_scale:
        scale = reshape(params[f"{prefix}.layerscale.gamma"], (dim, 1, 1))
        y = mul(y, scale)
    return add(x, y)


def convnext_backbone_forward(x: Tensor, spec: ModelSpec, params: ParamStore) -> Tensor:
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != spec.input_size or x.shape[3] != spec.input_size:
        raise ShapeError(
            f"backbone expects Bx3x{spec.input_size}x{spec.input_size} input, got {x.shape}"
        )
    y = conv2d(x, params["backbone.stem.conv.kernel"], params["backbone.stem.conv.bias"], stride=4)
    y = _channels_last_norm(y, params, "backbone.stem.norm", spec.stage_dims[0])
    for s in range(4):
        if s > 0:
            y = _channels_last_norm(y, params, f"backbone.down{s}.norm", spec.stage_dims[s - 1])
            y = conv2d(
                y,
                params[f"backbone.down{s}.conv.kernel"],
                params[f"backbone.down{s}.conv.bias"],
                stride=2,
            )
        for b in range(spec.stage_depths[s]):
            y = convnext_block_forward(y, params, f"backbone.stage{s}.block{b}", spec)
    return y


def bridge(features: Tensor, spec: ModelSpec, params: ParamStore) -> Tensor:
    """Flatten the spatial grid into vectors, then split them into tokens.

    Each backbone vector of width C becomes C/token_dim consecutive tokens;
    learnable mode first passes every vector through a shared CxC linear map.
    """
    B, C, H, W = features.shape
    if C * H * W != spec.token_count * spec.token_dim:
        raise ShapeError(
            f"bridge: feature shape {features.shape} has {C * H * W} elements per sample, "
            f"need {spec.token_count}x{spec.token_dim}"
        )
    vectors = reshape(transpose(features, (0, 2, 3, 1)), (B, H * W, C))
    if spec.bridge_mode == "learnable":
        vectors = _linear(vectors, params, "bridge.proj")
    tokens = reshape(vectors, (B, spec.token_count, spec.token_dim))
    if spec.positional_embedding:
        tokens = add(tokens, params["bridge.pos.embedding"])
    return tokens


def _attention(x: Tensor, params: ParamStore, prefix: str, spec: ModelSpec) -> Tensor:
    B, N, D = x.shape
    heads = spec.num_heads
    dh = D // heads

    def split_heads(t: Tensor) -> Tensor:
        return transpose(reshape(t, (B, N, heads, dh)), (0, 2, 1, 3))

    q = split_heads(_linear(x, params, f"{prefix}.q"))
    k = split_heads(_linear(x, params, f"{prefix}.k"))
    v = split_heads(_linear(x, params, f"{prefix}.v"))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), Tensor(1.0 / math.sqrt(dh), dtype=x.dtype))
    weights = softmax(scores, -1)
    ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (B, N, D))
    return _linear(ctx, params, f"{prefix}.out")


def vit_encoder_forward(tokens: Tensor, spec: ModelSpec, params: ParamStore) -> Tensor:
    if tokens.ndim != 3 or tokens.shape[-1] != spec.token_dim:
        raise ShapeError(
            f"encoder expects BxNx{spec.token_dim} tokens, got {tokens.shape}"
        )
    d = spec.token_dim
    y = tokens
    for i in range(spec.encoder_blocks):
        pre = f"encoder.block{i}"
        normed = layer_norm(y, d, params[f"{pre}.attn.norm.gamma"], params[f"{pre}.attn.norm.beta"], LAYER_NORM_EPS)
        y = add(y, _attention(normed, params, f"{pre}.attn", spec))
        normed = layer_norm(y, d, params[f"{pre}.ffn.norm.gamma"], params[f"{pre}.ffn.norm.beta"], LAYER_NORM_EPS)
        h = gelu(_linear(normed, params, f"{pre}.ffn.fc1"))
        y = add(y, _linear(h, params, f"{pre}.ffn.fc2"))
    return layer_norm(y, d, params["encoder.norm.gamma"], params["encoder.norm.beta"], LAYER_NORM_EPS)


def _head(pooled: Tensor, params: ParamStore, spec: ModelSpec) -> Tensor:
    if spec.head_layers == 1:
        return _linear(pooled, params, "head.fc")
    return _linear(gelu(_linear(pooled, params, "head.fc1")), params, "head.fc2")


def mlp_head_forward(tokens: Tensor, params: ParamStore, spec: ModelSpec) -> Tensor:
    """Average over the token axis, then the 1- or 2-layer regression head."""
    if spec.head_layers not in (1, 2):
        raise ConfigError(f"head_layers must be 1 or 2, got {spec.head_layers}")
    return _head(mean(tokens, axis=1), params, spec)


def _patchify(x: Tensor, spec: ModelSpec) -> Tensor:
    B = x.shape[0]
    n = spec.input_size // PATCH_SIZE
    t = reshape(x, (B, 3, n, PATCH_SIZE, n, PATCH_SIZE))
    t = transpose(t, (0, 2, 4, 1, 3, 5))
    return reshape(t, (B, n * n, 3 * PATCH_SIZE * PATCH_SIZE))


def model_forward(
    x: Tensor,
    spec: ModelSpec,
    params: ParamStore,
    intermediates: Optional[dict] = None,
) -> Tensor:
    """Run a batch of images through the configured variant; returns [B, 1]."""
    spec.validate()
    if spec.variant == "convnext":
        feats = convnext_backbone_forward(x, spec, params)
        if intermediates is not None:
            intermediates["backbone"] = feats
        return _head(mean(feats, axis=(2, 3)), params, spec)
    if spec.variant == "vit":
        tokens = _linear(_patchify(x, spec), params, "embed.proj")
        if spec.positional_embedding:
            tokens = add(tokens, params["embed.pos.embedding"])
        if intermediates is not None:
            intermediates["tokens"] = tokens
        encoded = vit_encoder_forward(tokens, spec, params)
        return mlp_head_forward(encoded, params, spec)
    feats = convnext_backbone_forward(x, spec, params)
    tokens = bridge(feats, spec, params)
    if intermediates is not None:
        intermediates["backbone"] = feats
        intermediates["tokens"] = tokens
    encoded = vit_encoder_forward(tokens, spec, params)
    return mlp_head_forward(encoded, params, spec)

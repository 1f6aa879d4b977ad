"""Toy alternating-attention trunk with camera and dense prediction heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bundle import FrameBundle
from .geoadapter import GeoAdapter, PreparedAux, prepare_aux
from .nn import LayerNorm, Linear, Module, TransformerLayer
from .tensor import Parameter, Tensor, concat, exp, log, patchify_conv, softplus


@dataclass(frozen=True)
class BackboneConfig:
    dim: int = 64
    layers: int = 4
    heads: int = 4
    patch: int = 8
    registers: int = 2
    height: int = 32
    width: int = 32
    channels: int = 3
    mlp_ratio: int = 2
    camera_head_layers: int = 2
    dtype: str = "float64"

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(f"image {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.layers < 1:
            raise ValueError("need at least one block")
        if self.registers < 0:
            raise ValueError("registers must be >= 0")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype).type

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def num_patches(self) -> int:
        hp, wp = self.grid
        return hp * wp


@dataclass
class TokenSet:
    camera: Tensor  # N x 1 x dim
    registers: Tensor  # N x r x dim
    spatial: Tensor  # N x P x dim

    @property
    def num_frames(self) -> int:
        return self.camera.shape[0]

    def joined(self) -> Tensor:
        return concat([self.camera, self.registers, self.spatial], axis=1)

    @classmethod
    def split(cls, x: Tensor, registers: int) -> TokenSet:
        return cls(x[:, 0:1, :], x[:, 1:1 + registers, :], x[:, 1 + registers:, :])


@dataclass
class Predictions:
    cameras: Tensor  # N x 9, quaternion part unit-norm with w >= 0
    depth: Tensor  # N x H x W
    depth_conf: Tensor  # N x H x W
    pmap: Tensor  # N x 3 x H x W
    pmap_conf: Tensor  # N x H x W
    raw_cameras: Tensor | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k).data for k in ("cameras", "depth", "depth_conf", "pmap", "pmap_conf")}


class AABlock(Module):
    """Frame-wise layer (each frame attends to itself) then a global layer (all frames jointly)."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        dt = cfg.np_dtype
        self.frame = TransformerLayer(cfg.dim, cfg.heads, cfg.mlp_ratio, rng, dt)
        self.glob = TransformerLayer(cfg.dim, cfg.heads, cfg.mlp_ratio, rng, dt)

    def __call__(self, x: Tensor) -> Tensor:
        n, t, d = x.shape
        x = self.frame(x)
        return self.glob(x.reshape(1, n * t, d)).reshape(n, t, d)


def normalize_quaternions(q: Tensor) -> Tensor:
    """Unit-normalise rows of ``[N, 4]`` and flip to ``w >= 0``; zero rows become identity."""
    qd = q.data
    norms = np.sqrt((qd * qd).sum(axis=1))
    valid = (norms > 1e-12).astype(q.dtype)[:, None]
    sign = np.where(qd[:, :1] < 0, -1.0, 1.0).astype(q.dtype)
    sumsq = (q * q).sum(axis=1, keepdims=True) + (1.0 - valid)
    inv = exp(log(sumsq) * -0.5)
    ident = np.zeros_like(qd)
    ident[:, 0] = 1.0
    return q * inv * (sign * valid) + ident * (1.0 - valid)


class CameraHead(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        dt = cfg.np_dtype
        self.norm = LayerNorm(cfg.dim, dt)
        self.layers = [TransformerLayer(cfg.dim, cfg.heads, cfg.mlp_ratio, rng, dt)
                       for _ in range(cfg.camera_head_layers)]
        self.out_norm = LayerNorm(cfg.dim, dt)
        self.out = Linear(cfg.dim, 9, rng, dt)

    def raw(self, tokens: Tensor) -> Tensor:
        n, d = tokens.shape
        x = self.norm(tokens).reshape(1, n, d)
        for layer in self.layers:
            x = layer(x)
        return self.out(self.out_norm(x.reshape(n, d)))

    def __call__(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        raw = self.raw(tokens)
        return concat([normalize_quaternions(raw[:, :4]), raw[:, 4:]], axis=1), raw


class DenseHead(Module):
    """Per-token linear map to a ``patch x patch`` tile of values plus confidence."""

    def __init__(self, cfg: BackboneConfig, channels: int, rng: np.random.Generator):
        self.channels = channels
        self.cfg = cfg
        self.norm = LayerNorm(cfg.dim, cfg.np_dtype)
        self.out = Linear(cfg.dim, cfg.patch * cfg.patch * (channels + 1), rng, cfg.np_dtype)

    def __call__(self, spatial: Tensor) -> tuple[Tensor, Tensor]:
        cfg = self.cfg
        n = spatial.shape[0]
        p = cfg.patch
        hp, wp = cfg.grid
        c = self.channels + 1
        tiles = self.out(self.norm(spatial)).reshape(n, hp, wp, c, p, p)
        full = tiles.transpose(0, 3, 1, 4, 2, 5).reshape(n, c, cfg.height, cfg.width)
        values = full[:, :self.channels]
        conf = softplus(full[:, self.channels]) + 1.0
        return values, conf


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig = BackboneConfig(), seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        dt = cfg.np_dtype
        d = cfg.dim
        fan_in = cfg.channels * cfg.patch * cfg.patch
        self.cfg = cfg
        self.patch_weight = Parameter(rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, d)), dtype=dt)
        self.patch_bias = Parameter(np.zeros(d), dtype=dt)
        self.pos_embed = Parameter(rng.normal(0.0, 0.1, (cfg.num_patches, d)), dtype=dt)
        self.camera_token = Parameter(rng.normal(0.0, 0.1, (1, 1, d)), dtype=dt)
        self.first_frame_flag = Parameter(rng.normal(0.0, 0.1, (1, 1, d)), dtype=dt)
        self.register_tokens = Parameter(rng.normal(0.0, 0.1, (1, cfg.registers, d)), dtype=dt)
        self.blocks = [AABlock(cfg, rng) for _ in range(cfg.layers)]
        self.camera_head = CameraHead(cfg, rng)
        self.depth_head = DenseHead(cfg, 1, rng)
        self.pmap_head = DenseHead(cfg, 3, rng)

    def embed_frames(self, images: np.ndarray) -> TokenSet:
        cfg = self.cfg
        images = np.asarray(images)
        expect = (cfg.channels, cfg.height, cfg.width)
        if images.ndim != 4 or images.shape[1:] != expect:
            raise ValueError(f"images {images.shape} do not match N x {expect}")
        n = images.shape[0]
        dt = cfg.np_dtype
        spatial = patchify_conv(Tensor(images.astype(dt)), self.patch_weight, self.patch_bias, cfg.patch)
        spatial = spatial + self.pos_embed
        first = np.zeros((n, 1, 1), dtype=dt)
        first[0] = 1.0
        camera = self.camera_token + self.first_frame_flag * first
        registers = self.register_tokens + np.zeros((n, 1, 1), dtype=dt)
        return TokenSet(camera, registers, spatial)

    def aa_block(self, tokens: TokenSet, layer: int) -> TokenSet:
        if not 0 <= layer < self.cfg.layers:
            raise IndexError(f"block {layer} outside 0..{self.cfg.layers - 1}")
        return TokenSet.split(self.blocks[layer](tokens.joined()), self.cfg.registers)

    def heads(self, camera: Tensor, spatial: Tensor) -> Predictions:
        cams, raw = self.camera_head(camera)
        depth, dconf = self.depth_head(spatial)
        pmap, pconf = self.pmap_head(spatial)
        return Predictions(cams, softplus(depth[:, 0]), dconf, pmap, pconf, raw)

    def forward(self, bundle: FrameBundle | np.ndarray, adapter: GeoAdapter | None = None,
                aux: PreparedAux | None = None) -> Predictions:
        if not isinstance(bundle, FrameBundle):
            bundle = FrameBundle.images_only(bundle)
        cfg = self.cfg
        if adapter is not None and adapter.dim != cfg.dim:
            raise ValueError(f"adapter width {adapter.dim} does not match backbone width {cfg.dim}")
        if adapter is not None and adapter.layers != cfg.layers:
            raise ValueError(f"adapter built for {adapter.layers} blocks, backbone has {cfg.layers}")
        tokens = self.embed_frames(bundle.images)
        if adapter is not None:
            aux = aux if aux is not None else prepare_aux(bundle)
            tokens.spatial = adapter.inject_depth(tokens.spatial, aux)
        x = tokens.joined()
        for layer, block in enumerate(self.blocks):
            if adapter is not None:
                x = concat([adapter.inject_camera(x[:, 0:1, :], aux, layer), x[:, 1:, :]], axis=1)
            x = block(x)
        camera = x[:, 0:1, :]
        if adapter is not None:
            camera = adapter.inject_camera(camera, aux, cfg.layers)
        n = x.shape[0]
        # registers are dropped here
        return self.heads(camera.reshape(n, cfg.dim), x[:, 1 + cfg.registers:, :])

    __call__ = forward


class ReconModel(Module):
    """Trunk plus (optional) adapter; the unit that is trained and checkpointed."""

    def __init__(self, cfg: BackboneConfig = BackboneConfig(), variant: str | None = "default", seed: int = 0):
        self.backbone = Backbone(cfg, seed)
        self.adapter = (GeoAdapter(cfg.dim, cfg.layers, cfg.patch, variant, seed, cfg.np_dtype)
                        if variant is not None else None)

    @property
    def cfg(self) -> BackboneConfig:
        return self.backbone.cfg

    def __call__(self, bundle: FrameBundle, aux: PreparedAux | None = None) -> Predictions:
        return self.backbone.forward(bundle, self.adapter, aux)

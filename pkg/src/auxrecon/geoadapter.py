"""Injection of known cameras and depth maps into the token stream.

Camera path: one linear encoder per injection point turns the 9-value
camera encoding into a token; a zero-initialised affine map gates it into
the camera token before each block. Frames without a camera contribute a
constant zero placeholder.

Depth path: ``[depth; mask]`` is patchified by a single conv layer and added
to the spatial tokens once, before the first block. Frames without depth
receive a learnable placeholder that starts at zero.

Both paths are exact no-ops on a freshly built adapter, so attaching one to
a trained trunk leaves its outputs untouched until training moves the gates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .bundle import FrameBundle
from .geometry import encode_camera, normalize_depth_batch, normalize_poses
from .nn import Linear, Module
from .tensor import Parameter, Tensor, patchify_conv


class AdapterVariant(str, Enum):
    DEFAULT = "default"
    REPLACE = "replace"
    ONE_LAYER = "one_layer"
    DEPTH_ZERO_CONV = "depth_zero_conv"


@dataclass
class PreparedAux:
    camera_vectors: np.ndarray  # N x 9, zero rows where absent
    camera_flags: np.ndarray  # N
    depth_inputs: np.ndarray  # N x 2 x H x W, zero where absent
    depth_flags: np.ndarray  # N
    pose_scale: float = 1.0
    depth_mean: float = 1.0


def prepare_aux(bundle: FrameBundle) -> PreparedAux:
    """Normalise and encode whatever auxiliary inputs the bundle carries.

    Annotated poses are re-expressed relative to the lowest-index annotated
    frame; annotated depths share one mean over all their valid pixels.
    """
    n = bundle.num_frames
    h, w = bundle.images.shape[-2:]
    m = bundle.camera_flags
    nd = bundle.depth_flags
    cams = np.zeros((n, 9))
    scale = 1.0
    idx = np.flatnonzero(m)
    if idx.size:
        poses, scale = normalize_poses([bundle.poses[i] for i in idx])
        for i, g in zip(idx, poses):
            cams[i] = encode_camera(bundle.intrinsics[i], g).as_array()
    x = np.zeros((n, 2, h, w))
    mean = 1.0
    didx = np.flatnonzero(nd)
    if didx.size:
        normed, mean = normalize_depth_batch([bundle.depths[i] for i in didx])
        for i, obs in zip(didx, normed):
            valid = obs.mask > 0.5
            x[i, 0] = np.where(valid, obs.depth, 0.0)
            x[i, 1] = valid
    return PreparedAux(cams, m.astype(np.float64), x, nd.astype(np.float64), scale, mean)


class CameraAdapter(Module):
    def __init__(self, dim: int, points: int, rng: np.random.Generator, dtype=np.float64, gated: bool = True):
        self.encoders = [Linear(9, dim, rng, dtype) for _ in range(points)]
        self.zero_injections = [Linear(dim, dim, rng, dtype, zero=True) for _ in range(points)] if gated else []
        self.placeholder = np.zeros(dim, dtype=dtype)

    def aux_tokens(self, point: int, aux: PreparedAux, dtype) -> Tensor:
        """``m_i E_l(g_i) + (1 - m_i) e_plh`` for every frame, shape ``[N, dim]``."""
        m = aux.camera_flags.astype(dtype)[:, None]
        if not m.any():
            return Tensor(np.broadcast_to(self.placeholder, (len(m), self.placeholder.size)).copy())
        enc = self.encoders[point](Tensor(aux.camera_vectors.astype(dtype)))
        return enc * m + Tensor(self.placeholder[None, :] * (1.0 - m))


class DepthAdapter(Module):
    def __init__(self, dim: int, patch: int, rng: np.random.Generator, dtype=np.float64, zero_conv: bool = False):
        fan_in = 2 * patch * patch
        self.weight = Parameter(rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, dim)), dtype=dtype)
        self.bias = Parameter(np.zeros(dim), dtype=dtype)
        self.placeholder = Parameter(np.zeros((1, 1, dim)), dtype=dtype)
        self.zero_conv = Linear(dim, dim, rng, dtype, zero=True) if zero_conv else None
        self.patch = patch

    def encode(self, x: np.ndarray) -> Tensor:
        tokens = patchify_conv(Tensor(x.astype(self.weight.dtype)), self.weight, self.bias, self.patch)
        if self.zero_conv is not None:
            tokens = self.zero_conv(tokens)
        return tokens


class GeoAdapter(Module):
    def __init__(self, dim: int, layers: int, patch: int, variant: AdapterVariant | str = AdapterVariant.DEFAULT,
                 seed: int = 0, dtype=np.float64):
        variant = AdapterVariant(variant)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        points = 1 if variant is AdapterVariant.ONE_LAYER else layers + 1
        self.camera = CameraAdapter(dim, points, rng, dtype, gated=variant is not AdapterVariant.REPLACE)
        self.depth = DepthAdapter(dim, patch, rng, dtype, zero_conv=variant is AdapterVariant.DEPTH_ZERO_CONV)
        self.variant = variant
        self.layers = layers
        self.dim = dim

    @property
    def injection_points(self) -> int:
        return len(self.camera.encoders)

    def inject_camera(self, cam: Tensor, aux: PreparedAux, layer: int) -> Tensor:
        """Update camera tokens ``[N, 1, dim]`` before block ``layer`` (``layer == L`` feeds the heads)."""
        if not 0 <= layer <= self.layers:
            raise IndexError(f"injection layer {layer} outside 0..{self.layers}")
        if self.variant is AdapterVariant.ONE_LAYER and layer > 0:
            return cam
        point = 0 if self.variant is AdapterVariant.ONE_LAYER else layer
        n, _, d = cam.shape
        mixed = self.camera.aux_tokens(point, aux, cam.dtype.type)
        if self.variant is AdapterVariant.REPLACE:
            m = aux.camera_flags.astype(cam.dtype)[:, None, None]
            if not m.any():
                return cam
            return mixed.reshape(n, 1, d) + cam * (1.0 - m)
        return cam + self.camera.zero_injections[point](mixed).reshape(n, 1, d)

    def inject_depth(self, spatial: Tensor, aux: PreparedAux) -> Tensor:
        """Add depth tokens (or the placeholder) to spatial tokens ``[N, P, dim]``."""
        flags = aux.depth_flags.astype(spatial.dtype)[:, None, None]
        absent = self.depth.placeholder * (1.0 - flags)
        if not flags.any():
            return spatial + absent
        tokens = self.depth.encode(aux.depth_inputs)
        if tokens.shape != spatial.shape:
            raise ValueError(f"depth tokens {tokens.shape} do not match spatial tokens {spatial.shape}")
        return spatial + (tokens * flags + absent)

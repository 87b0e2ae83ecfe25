"""Fusion encoder-decoder for sparse-to-dense depth regression.

Input front-ends for three modality modes (RGB only, channel concatenation
truncated back to 3 channels by a 1x1 convolution, elementwise addition of
the sparse channel), a strided-conv pyramid encoder with channel doubling,
and a decoder of bilinear 2x upsampling + skip concatenation + two 3x3
convolutions producing half the concatenated channels. The head is a 3x3
convolution to one channel followed by a sigmoid, so the network predicts a
normalized reciprocal depth in (0, 1).
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .losses import ReciprocalCodec

CHECKPOINT_MAGIC = "depthfusion-checkpoint-v1"


class FusionMode(Enum):
    RGB_ONLY = "rgb"
    CONCAT_TRUNCATE = "concat"
    ELEMENTWISE_ADD = "add"


@dataclass
class ModelConfig:
    input_height: int = 96
    input_width: int = 160
    base_channels: int = 16
    encoder_stages: int = 4
    fusion_mode: FusionMode = FusionMode.RGB_ONLY
    leaky_alpha: float = 0.2
    h_reciprocal: float = 10.0
    d_min: float = 0.5
    d_max: float = 80.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.fusion_mode, str):
            self.fusion_mode = FusionMode(self.fusion_mode)
        div = 2 ** self.encoder_stages
        if self.input_height % div or self.input_width % div:
            raise ValueError(
                f"input {self.input_height}x{self.input_width} not divisible "
                f"by 2^{self.encoder_stages}")
        if self.encoder_stages < 1 or self.base_channels < 1:
            raise ValueError("encoder_stages and base_channels must be >= 1")

    def codec(self) -> ReciprocalCodec:
        return ReciprocalCodec(h=self.h_reciprocal, d_min=self.d_min,
                               d_max=self.d_max)


def _he_conv(rng, cout, cin, kh, kw, dtype):
    std = np.sqrt(2.0 / (cin * kh * kw))
    return rng.normal(0.0, std, size=(cout, cin, kh, kw)).astype(dtype)


class Model:
    """Weight container plus the forward pass. Build via ``build_model``."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._init_weights()

    # -- construction -------------------------------------------------------

    def _add(self, name, array):
        self.params[name] = Tensor(array, requires_grad=True)

    def _init_weights(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        dt = self.dtype
        if cfg.fusion_mode is FusionMode.CONCAT_TRUNCATE:
            self._add("fuse.kernel", _he_conv(rng, 3, 4, 1, 1, dt))
            self._add("fuse.bias", np.zeros(3, dtype=dt))
        cin = 3
        for s in range(1, cfg.encoder_stages + 1):
            cout = cfg.base_channels * 2 ** (s - 1)
            self._add(f"enc{s}.conv.kernel", _he_conv(rng, cout, cin, 3, 3, dt))
            self._add(f"enc{s}.conv.bias", np.zeros(cout, dtype=dt))
            self._add(f"enc{s}.down.kernel", _he_conv(rng, cout, cout, 3, 3, dt))
            self._add(f"enc{s}.down.bias", np.zeros(cout, dtype=dt))
            cin = cout
        cur = cin
        for s in range(cfg.encoder_stages, 0, -1):
            skip_ch = cfg.base_channels * 2 ** (s - 1)
            cat = cur + skip_ch
            half = cat // 2
            self._add(f"dec{s}.conv1.kernel", _he_conv(rng, half, cat, 3, 3, dt))
            self._add(f"dec{s}.conv1.bias", np.zeros(half, dtype=dt))
            self._add(f"dec{s}.conv2.kernel", _he_conv(rng, half, half, 3, 3, dt))
            self._add(f"dec{s}.conv2.bias", np.zeros(half, dtype=dt))
            cur = half
        self._add("head.kernel", _he_conv(rng, 1, cur, 3, 3, dt))
        # head bias starts at the logit of a mid-range reciprocal target, not
        # zero: with zero bias the sigmoid sits at 0.5 while most targets are
        # far below it, and low-step overfitting stalls
        self._add("head.bias", np.full(1, -2.5, dtype=dt))

    def encoder_feature_shapes(self):
        """(channels, height, width) after each downsampling stage."""
        cfg = self.config
        shapes = []
        h, w = cfg.input_height, cfg.input_width
        for s in range(1, cfg.encoder_stages + 1):
            h, w = h // 2, w // 2
            shapes.append((cfg.base_channels * 2 ** (s - 1), h, w))
        return shapes

    def skip_shapes(self):
        """Pre-downsample activation shapes, one per encoder stage."""
        cfg = self.config
        shapes = []
        h, w = cfg.input_height, cfg.input_width
        for s in range(1, cfg.encoder_stages + 1):
            shapes.append((cfg.base_channels * 2 ** (s - 1), h, w))
            h, w = h // 2, w // 2
        return shapes

    # -- forward ------------------------------------------------------------

    def fuse_input(self, rgb: Tensor, sparse: Tensor | None) -> Tensor:
        """Combine RGB and the sparse reciprocal-depth channel into 3 channels.

        ``sparse`` holds normalized reciprocal depths in [0, 1] with 0 for
        missing measurements; it is required except in RGB-only mode.
        """
        mode = self.config.fusion_mode
        if mode is FusionMode.RGB_ONLY:
            return rgb
        if sparse is None:
            raise ValueError(f"fusion mode {mode.value} requires a sparse channel")
        if rgb.shape[0] != sparse.shape[0] or rgb.shape[2:] != sparse.shape[2:] \
                or sparse.shape[1] != 1:
            raise T.ShapeError(
                f"fuse_input: rgb {rgb.shape} vs sparse {sparse.shape}")
        if mode is FusionMode.CONCAT_TRUNCATE:
            stacked = T.concat_channels(rgb, sparse)
            return T.conv1x1(stacked, self.params["fuse.kernel"],
                             self.params["fuse.bias"])
        return T.add_elementwise(rgb, sparse)

    def forward(self, fused: Tensor) -> Tensor:
        cfg = self.config
        if fused.shape[1] != 3 or fused.shape[2] != cfg.input_height \
                or fused.shape[3] != cfg.input_width:
            raise T.ShapeError(
                f"forward: input {fused.shape} does not match configured "
                f"3x{cfg.input_height}x{cfg.input_width}")
        a = cfg.leaky_alpha
        x = fused
        skips = []
        for s in range(1, cfg.encoder_stages + 1):
            x = T.leaky_relu(T.conv2d(x, self.params[f"enc{s}.conv.kernel"],
                                      self.params[f"enc{s}.conv.bias"],
                                      stride=1, padding=1), a)
            skips.append(x)
            x = T.leaky_relu(T.conv2d(x, self.params[f"enc{s}.down.kernel"],
                                      self.params[f"enc{s}.down.bias"],
                                      stride=2, padding=1), a)
        for s in range(cfg.encoder_stages, 0, -1):
            x = T.bilinear_upsample2x(x)
            x = T.concat_channels(x, skips[s - 1])
            x = T.leaky_relu(T.conv2d(x, self.params[f"dec{s}.conv1.kernel"],
                                      self.params[f"dec{s}.conv1.bias"],
                                      stride=1, padding=1), a)
            x = T.leaky_relu(T.conv2d(x, self.params[f"dec{s}.conv2.kernel"],
                                      self.params[f"dec{s}.conv2.bias"],
                                      stride=1, padding=1), a)
        logits = T.conv2d(x, self.params["head.kernel"], self.params["head.bias"],
                          stride=1, padding=1)
        return T.sigmoid(logits)

    def predict(self, rgb: Tensor, sparse: Tensor | None) -> Tensor:
        return self.forward(self.fuse_input(rgb, sparse))

    def predict_depth(self, rgb: np.ndarray, sparse: np.ndarray | None) -> np.ndarray:
        """Metric depth map(s) in meters, clamped to [d_min, d_max].

        ``rgb``: (N,3,H,W) or (H,W,3); ``sparse``: (N,1,H,W) or (H,W) in
        meters with 0 = no measurement (encoded internally).
        """
        codec = self.config.codec()
        single = rgb.ndim == 3
        if single:
            rgb_n = rgb.transpose(2, 0, 1)[None]
            sparse_n = None if sparse is None else sparse[None, None]
        else:
            rgb_n = rgb
            sparse_n = sparse
        rgb_t = Tensor(rgb_n.astype(self.dtype))
        sparse_t = None
        if self.config.fusion_mode is not FusionMode.RGB_ONLY:
            if sparse_n is None:
                raise ValueError("this model requires a sparse input")
            sparse_t = Tensor(encode_sparse(sparse_n, codec).astype(self.dtype))
        pred = self.predict(rgb_t, sparse_t).data
        depth = codec.decode(pred.astype(np.float64))
        return depth[0, 0] if single else depth[:, 0]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def encode_sparse(sparse_meters: np.ndarray, codec: ReciprocalCodec) -> np.ndarray:
    """Encode nonzero depths to reciprocal targets, keeping the 0 sentinel."""
    s = np.asarray(sparse_meters, dtype=np.float64)
    return np.where(s > 0, codec.encode(np.maximum(s, codec.d_min)), 0.0)


def build_model(config: ModelConfig, dtype=np.float32) -> Model:
    return Model(config, dtype=dtype)


# ---------------------------------------------------------------------------
# checkpoint format: UTF-8 text header (key=value lines), then named tensors
# as {u32 name length, name bytes, u32 rank, u32 extents..., f32 LE data}


_CONFIG_KEYS = ("input_height", "input_width", "base_channels", "encoder_stages",
                "fusion_mode", "leaky_alpha", "h_reciprocal", "d_min", "d_max",
                "seed")


def save_checkpoint(path, model: Model, extra: dict | None = None,
                    moments: dict[str, np.ndarray] | None = None):
    """``extra`` carries scalar training state (epoch, lr, adam_t, ...)."""
    cfg = asdict(model.config)
    cfg["fusion_mode"] = model.config.fusion_mode.value
    tensors = dict(model.params.items())
    named = {name: t.data for name, t in tensors.items()}
    if moments:
        named.update(moments)
    with open(path, "wb") as f:
        f.write(f"{CHECKPOINT_MAGIC}\n".encode("utf-8"))
        for k in _CONFIG_KEYS:
            f.write(f"config.{k}={cfg[k]!r}\n".encode("utf-8"))
        for k in sorted(extra or {}):
            f.write(f"state.{k}={extra[k]!r}\n".encode("utf-8"))
        f.write(f"tensors={len(named)}\n".encode("utf-8"))
        for name, arr in named.items():
            nb = name.encode("utf-8")
            a32 = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", a32.ndim))
            for ext in a32.shape:
                f.write(struct.pack("<I", ext))
            f.write(a32.tobytes())


def load_checkpoint(path):
    """Returns (model, extra state dict, optimizer moment arrays)."""
    with open(path, "rb") as f:
        blob = f.read()
    pos = blob.index(b"\n") + 1
    if blob[:pos - 1].decode("utf-8") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a depthfusion checkpoint")
    cfg_kv = {}
    extra = {}
    n_tensors = None
    while n_tensors is None:
        end = blob.index(b"\n", pos)
        line = blob[pos:end].decode("utf-8")
        pos = end + 1
        key, value = line.split("=", 1)
        if key == "tensors":
            n_tensors = int(value)
        elif key.startswith("config."):
            cfg_kv[key[len("config."):]] = ast.literal_eval(value)
        elif key.startswith("state."):
            extra[key[len("state."):]] = ast.literal_eval(value)
        else:
            raise ValueError(f"{path}: unexpected header line {line!r}")
    config = ModelConfig(**cfg_kv)
    named = {}
    for _ in range(n_tensors):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        named[name] = arr.reshape(shape).copy()
    model = Model(config)
    moments = {}
    for name, arr in named.items():
        if name in model.params:
            model.params[name].data = arr.astype(model.dtype)
        else:
            moments[name] = arr
    return model, extra, moments

"""The capsule autoencoder: conv encoder, capsule layers, deconv decoder."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import capsnet
from . import tensor as T
from .errors import CacheError, ConfigError
from .tensor import Parameter, Tensor

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class NetworkConfig:
    input_shape: tuple = (96, 28)
    conv_channels: tuple = (64, 64, 64, 128, 128)
    kernel_size: int = 3
    conv_strides: tuple = ((2, 1), (2, 1), (2, 2), (2, 2), (1, 1))
    primary_grid: tuple = (6, 6)
    primary_types: int = 16
    primary_dim: int = 9
    class_capsules: int = 9
    class_dim: int = 16
    fc_width: int = 1152
    deconv_channels: tuple = (128, 64, 32)
    activation: str = "relu"
    routing_iterations: int = 3
    squash_variant: str = "standard"
    precision: str = "float32"

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.conv_channels = tuple(int(v) for v in self.conv_channels)
        self.conv_strides = tuple(tuple(int(s) for s in pair) for pair in self.conv_strides)
        self.primary_grid = tuple(int(v) for v in self.primary_grid)
        self.deconv_channels = tuple(int(v) for v in self.deconv_channels)
        self.validate()

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def n_primary(self) -> int:
        return self.primary_grid[0] * self.primary_grid[1] * self.primary_types

    @property
    def embedding_dim(self) -> int:
        return self.class_capsules

    @property
    def decoder_seed(self) -> int:
        return math.isqrt(self.fc_width // self.deconv_channels[0])

    def conv_geometry(self) -> list:
        """Spatial extent after each conv layer, before adaptive pooling."""
        h, w = self.input_shape
        pad = self.kernel_size // 2
        out = []
        for sh, sw in self.conv_strides:
            h = T.conv_output_size(h, self.kernel_size, sh, pad)
            w = T.conv_output_size(w, self.kernel_size, sw, pad)
            out.append((h, w))
        return out

    def decoder_geometry(self) -> list:
        side = self.decoder_seed
        out = [(side, side)]
        for _ in self.deconv_channels:
            side *= 2
            out.append((side, side))
        return out

    def validate(self):
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if self.activation not in ("relu", "sigmoid"):
            raise ConfigError(f"activation must be relu or sigmoid, got {self.activation!r}")
        if self.squash_variant not in ("standard", "printed"):
            raise ConfigError(f"squash_variant must be standard or printed, got {self.squash_variant!r}")
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (rows, cols), got {self.input_shape}")
        if not self.conv_channels or len(self.conv_channels) != len(self.conv_strides):
            raise ConfigError(
                f"{len(self.conv_channels)} conv layers but {len(self.conv_strides)} strides"
            )
        if not self.deconv_channels:
            raise ConfigError("at least one deconvolution layer is required")
        if self.routing_iterations < 1:
            raise ConfigError("routing_iterations must be >= 1")
        for (h, w) in self.conv_geometry():
            if h < 1 or w < 1:
                raise ConfigError(f"conv stack collapses input {self.input_shape} to {h}x{w}")
        gh, gw = self.conv_geometry()[-1]
        if gh < self.primary_grid[0] or gw < self.primary_grid[1]:
            raise ConfigError(
                f"conv stack output {gh}x{gw} is smaller than the primary capsule grid "
                f"{self.primary_grid[0]}x{self.primary_grid[1]}; adjust conv_strides"
            )
        seed_ch = self.deconv_channels[0]
        side = self.decoder_seed
        if self.fc_width % seed_ch or side * side * seed_ch != self.fc_width:
            raise ConfigError(
                f"fc_width {self.fc_width} must equal side*side*{seed_ch} for a square decoder seed"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(map(list, v)) if k == "conv_strides" else list(v) if isinstance(v, tuple) else v)
                for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# input canonicalization


def time_bins(n_frames: int, n_rows: int) -> list:
    """Frame ranges [start, end) averaged into each of ``n_rows`` time bins."""
    bins = []
    for b in range(n_rows):
        start = (b * n_frames) // n_rows
        end = max(((b + 1) * n_frames) // n_rows, start + 1)
        bins.append((start, min(end, n_frames)))
    return bins


@dataclass
class Standardizer:
    """Per-coefficient zero-mean / unit-variance scaling fitted on a dataset."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, maps) -> "Standardizer":
        stacked = np.concatenate([np.asarray(m, dtype=np.float64) for m in maps], axis=0)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std = np.where(std > 1e-8, std, 1.0)
        # stored in f32 so a checkpoint reproduces the exact training inputs
        return cls(mean.astype(np.float32), std.astype(np.float32))

    def apply(self, m: np.ndarray) -> np.ndarray:
        return ((m - self.mean) / self.std).astype(np.float32)


def canonicalize(frames: np.ndarray, n_rows: int = 96, standardizer: Optional[Standardizer] = None) -> np.ndarray:
    """Average-pool the time axis of a T x D matrix to ``n_rows`` x D."""
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.size == 0:
        raise ConfigError(f"cannot canonicalize an empty or non-2-D matrix of shape {frames.shape}")
    out = np.stack([frames[s:e].mean(axis=0) for s, e in time_bins(frames.shape[0], n_rows)])
    if standardizer is not None:
        out = standardizer.apply(out)
    return out


def prepare_batch(matrices, config: NetworkConfig, standardizer: Optional[Standardizer] = None) -> np.ndarray:
    """Canonicalize MFCC matrices into an (N, 1, H, W) network input array."""
    rows, cols = config.input_shape
    maps = []
    for m in matrices:
        m = np.asarray(m)
        if m.shape[1] != cols:
            raise ConfigError(f"feature width {m.shape[1]} does not match network input width {cols}")
        maps.append(canonicalize(m, rows))
    if standardizer is not None:
        maps = [standardizer.apply(m) for m in maps]
    return np.stack(maps)[:, None].astype(config.dtype)


# ---------------------------------------------------------------------------
# the network


def _kaiming(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class EncoderOutput:
    primary: Tensor  # (N, n_primary, primary_dim)
    class_caps: Tensor  # (N, class_capsules, class_dim)
    embedding: Tensor  # (N, class_capsules)
    routing: capsnet.RoutingState = field(repr=False)


class CCAN:
    """Encoder (conv -> primary capsules -> routed class capsules) and decoder."""

    def __init__(self, config: Optional[NetworkConfig] = None, seed: int = 0):
        self.config = config = config or NetworkConfig()
        rng = np.random.default_rng(seed)
        dt = config.dtype
        k = config.kernel_size
        self.params: dict = {}

        def add(name, arr):
            if name in self.params:
                raise ConfigError(f"duplicate parameter name {name!r}")
            self.params[name] = Parameter(arr, name=name)

        c_in = 1
        for i, c_out in enumerate(config.conv_channels):
            add(f"enc.conv{i}.weight", _kaiming(rng, (c_out, c_in, k, k), c_in * k * k, dt))
            add(f"enc.conv{i}.bias", np.zeros(c_out, dtype=dt))
            c_in = c_out
        n_caps_ch = config.primary_types * config.primary_dim
        add("enc.primary.weight", _kaiming(rng, (n_caps_ch, c_in, 1, 1), c_in, dt))
        add("enc.primary.bias", np.zeros(n_caps_ch, dtype=dt))
        add("caps.W", capsnet.capsule_weights(
            config.n_primary, config.class_capsules, config.primary_dim, config.class_dim, rng, dt
        ).data)
        flat = config.class_capsules * config.class_dim
        add("dec.fc.weight", _kaiming(rng, (flat, config.fc_width), flat, dt))
        add("dec.fc.bias", np.zeros(config.fc_width, dtype=dt))
        c_in = config.deconv_channels[0]
        for i, c_out in enumerate(config.deconv_channels):
            add(f"dec.deconv{i}.weight", _kaiming(rng, (c_in, c_out, k, k), c_out * k * k, dt))
            add(f"dec.deconv{i}.bias", np.zeros(c_out, dtype=dt))
            c_in = c_out
        add("dec.out.weight", _kaiming(rng, (1, c_in, 1, 1), c_in, dt))
        add("dec.out.bias", np.zeros(1, dtype=dt))

        gh, gw = config.conv_geometry()[-1]
        self._pool = (T.adaptive_pool_matrix(gh, config.primary_grid[0], dt),
                      T.adaptive_pool_matrix(gw, config.primary_grid[1], dt))
        side = config.decoder_geometry()[-1][0]
        self._resize = (T.bilinear_matrix(side, config.input_shape[0], dt),
                        T.bilinear_matrix(side, config.input_shape[1], dt))

    def parameters(self) -> list:
        return list(self.params.values())

    def _act(self, x: Tensor) -> Tensor:
        return T.relu(x) if self.config.activation == "relu" else T.sigmoid(x)

    @staticmethod
    def _bias(x: Tensor, b: Tensor) -> Tensor:
        return x + b.reshape(1, -1, 1, 1)

    def encode(self, x: Tensor) -> EncoderOutput:
        cfg, p = self.config, self.params
        if x.ndim != 4 or x.shape[1:] != (1, *cfg.input_shape):
            raise ConfigError(f"encoder expects (N, 1, {cfg.input_shape[0]}, {cfg.input_shape[1]}), got {x.shape}")
        pad = cfg.kernel_size // 2
        h = x
        for i, stride in enumerate(cfg.conv_strides):
            h = T.conv2d(h, p[f"enc.conv{i}.weight"], stride, pad)
            h = self._act(self._bias(h, p[f"enc.conv{i}.bias"]))
        if h.shape[2:] != tuple(cfg.primary_grid):
            h = T.resample2d(h, *self._pool)
        n = x.shape[0]
        gh, gw = cfg.primary_grid
        caps = self._bias(T.conv2d(h, p["enc.primary.weight"]), p["enc.primary.bias"])
        caps = caps.reshape(n, cfg.primary_types, cfg.primary_dim, gh, gw).transpose(0, 3, 4, 1, 2)
        u = T.squash(caps.reshape(n, cfg.n_primary, cfg.primary_dim), variant=cfg.squash_variant)
        u_hat = capsnet.predict(u, p["caps.W"])
        v, state = capsnet.dynamic_routing(u_hat, cfg.routing_iterations, cfg.squash_variant)
        return EncoderOutput(u, v, capsnet.embedding(v), state)

    def decode(self, class_caps: Tensor) -> Tensor:
        cfg, p = self.config, self.params
        n = class_caps.shape[0]
        if class_caps.shape[1:] != (cfg.class_capsules, cfg.class_dim):
            raise ConfigError(
                f"decoder expects class capsules (N, {cfg.class_capsules}, {cfg.class_dim}), got {class_caps.shape}"
            )
        flat = class_caps.reshape(n, cfg.class_capsules * cfg.class_dim)
        h = self._act(flat @ p["dec.fc.weight"] + p["dec.fc.bias"])
        side = cfg.decoder_seed
        h = h.reshape(n, cfg.deconv_channels[0], side, side)
        pad = cfg.kernel_size // 2
        for i in range(len(cfg.deconv_channels)):
            h = T.conv2d_transpose(h, p[f"dec.deconv{i}.weight"], 2, pad, 1)
            h = self._act(self._bias(h, p[f"dec.deconv{i}.bias"]))
        h = self._bias(T.conv2d(h, p["dec.out.weight"]), p["dec.out.bias"])
        return T.resample2d(h, *self._resize)

    def forward(self, x: Tensor):
        enc = self.encode(x)
        return self.decode(enc.class_caps), enc

    def embed(self, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Embeddings for an (N, 1, H, W) array, computed without a graph."""
        out = []
        with T.no_grad():
            for start in range(0, len(inputs), batch_size):
                x = Tensor(inputs[start:start + batch_size].astype(self.config.dtype, copy=False))
                out.append(self.encode(x).embedding.data)
        return np.concatenate(out, axis=0)

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.params.items()}

    def load_state_dict(self, state: dict):
        for name, p in self.params.items():
            if name not in state:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ConfigError(f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype)
            p.grad = np.zeros_like(p.data)


def reconstruction_loss(x, reconstruction: Tensor) -> Tensor:
    """Batch mean of the squared Frobenius distance between input and reconstruction."""
    return T.mse(reconstruction, x)


# ---------------------------------------------------------------------------
# checkpoint file

CHECKPOINT_MAGIC = b"CCAN"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, config: dict, blobs: dict) -> None:
    """Write ``config`` (JSON-serializable) and named arrays as little-endian f32."""
    payload = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(blobs)))
        for name, arr in blobs.items():
            arr = np.asarray(arr)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Return ``(config, blobs)`` as written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CacheError(f"{path}: not a CCAN checkpoint (magic {data[:4]!r})")
    try:
        version, n_cfg = struct.unpack_from("<II", data, 4)
        if version != CHECKPOINT_VERSION:
            raise CacheError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        config = json.loads(data[pos:pos + n_cfg].decode("utf-8"))
        pos += n_cfg
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        blobs = {}
        for _ in range(count):
            (n_name,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n_name].decode("utf-8")
            pos += n_name
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            n_bytes = 4 * int(np.prod(shape, dtype=np.int64))
            if pos + n_bytes > len(data):
                raise CacheError(f"{path}: truncated blob {name!r}")
            blobs[name] = np.frombuffer(data, dtype="<f4", count=n_bytes // 4, offset=pos).reshape(shape).copy()
            pos += n_bytes
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CacheError(f"{path}: corrupt checkpoint ({exc})") from exc
    return config, blobs

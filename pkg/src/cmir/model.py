"""Disentangling network: per-modality adapters, encoders, decoders, fusion predictor.

Each modality m gets an adapter (linear+relu, d_m -> d), an encoder MLP
(d -> d' -> 2d) whose output splits into an invariant half and a spurious
half, and a decoder MLP (2d -> d' -> d). The predictor consumes the
concatenated invariant halves only; the spurious halves never reach it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ConfigError, DimensionError
from .rng import stream
from .tensor import Tensor


@dataclass
class ModelConfig:
    modality_dims: list[int]
    shared_dim: int = 150
    hidden_dim: int = 256
    output_dim: int = 1
    depth: int = 2  # layers per encoder/decoder/predictor MLP

    def __post_init__(self):
        if not self.modality_dims:
            raise ConfigError("at least one modality is required")
        for name in ("shared_dim", "hidden_dim", "output_dim", "depth"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for d_m in self.modality_dims:
            if d_m <= 0:
                raise ConfigError("modality dims must be positive")

    @property
    def num_modalities(self) -> int:
        return len(self.modality_dims)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.W = Tensor(
            rng.uniform(-bound, bound, size=(in_dim, out_dim)), requires_grad=True
        )
        self.b = Tensor(np.zeros((1, out_dim)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.W) + self.b

    def parameters(self):
        return [self.W, self.b]


class Mlp:
    """`depth` linear layers with relu after every hidden layer."""

    def __init__(self, in_dim, hidden_dim, out_dim, depth, rng):
        dims = [in_dim] + [hidden_dim] * (depth - 1) + [out_dim]
        self.layers = [
            Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = T.relu(layer(x))
        return self.layers[-1](x)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


class CmirModel:
    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        d, dp, depth = config.shared_dim, config.hidden_dim, config.depth
        m_count = config.num_modalities
        self.adapters = [
            Linear(config.modality_dims[m], d, stream(seed, "adapter", m))
            for m in range(m_count)
        ]
        self.encoders = [
            Mlp(d, dp, 2 * d, depth, stream(seed, "encoder", m))
            for m in range(m_count)
        ]
        self.decoders = [
            Mlp(2 * d, dp, d, depth, stream(seed, "decoder", m))
            for m in range(m_count)
        ]
        self.predictor = Mlp(
            m_count * d, dp, config.output_dim, depth, stream(seed, "predictor")
        )

    # ------------------------------------------------------------- structure
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for m, adapter in enumerate(self.adapters):
            out.append((f"adapter{m}.W", adapter.W))
            out.append((f"adapter{m}.b", adapter.b))
        for group, stacks in (("encoder", self.encoders), ("decoder", self.decoders)):
            for m, mlp in enumerate(stacks):
                for i, layer in enumerate(mlp.layers):
                    out.append((f"{group}{m}.l{i}.W", layer.W))
                    out.append((f"{group}{m}.l{i}.b", layer.b))
        for i, layer in enumerate(self.predictor.layers):
            out.append((f"predictor.l{i}.W", layer.W))
            out.append((f"predictor.l{i}.b", layer.b))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    # --------------------------------------------------------------- forward
    def adapt(self, m: int, x_raw: Tensor) -> Tensor:
        if x_raw.shape[1] != self.config.modality_dims[m]:
            raise DimensionError(
                f"modality {m} expects width {self.config.modality_dims[m]}, "
                f"got {x_raw.shape}"
            )
        return T.relu(self.adapters[m](x_raw))

    def encode(self, m: int, x: Tensor) -> tuple[Tensor, Tensor]:
        d = self.config.shared_dim
        if x.shape[1] != d:
            raise DimensionError(f"encoder expects width {d}, got {x.shape}")
        z = self.encoders[m](x)
        return T.slice_cols(z, 0, d), T.slice_cols(z, d, 2 * d)

    def decode(self, m: int, z_inv: Tensor, z_spu: Tensor) -> Tensor:
        d = self.config.shared_dim
        if z_inv.shape[1] != d or z_spu.shape[1] != d:
            raise DimensionError(
                f"decoder expects two width-{d} halves, got {z_inv.shape} and "
                f"{z_spu.shape}"
            )
        return self.decoders[m](T.concat_cols([z_inv, z_spu]))

    def predict(self, invariants: list[Tensor]) -> Tensor:
        if len(invariants) != self.config.num_modalities:
            raise DimensionError(
                f"expected {self.config.num_modalities} invariant blocks, "
                f"got {len(invariants)}"
            )
        return self.predictor(T.concat_cols(invariants))

    def predict_raw(self, adapted_features: list[Tensor]) -> Tensor:
        """Baseline path: fuse adapted modality features without disentanglement."""
        if len(adapted_features) != self.config.num_modalities:
            raise DimensionError(
                f"expected {self.config.num_modalities} feature blocks, "
                f"got {len(adapted_features)}"
            )
        return self.predictor(T.concat_cols(adapted_features))

    def forward_invariants(self, raw_features: list[Tensor]) -> list[Tensor]:
        return [
            self.encode(m, self.adapt(m, x))[0]
            for m, x in enumerate(raw_features)
        ]


def init_model(config: ModelConfig, seed: int) -> CmirModel:
    return CmirModel(config, seed)


# ------------------------------------------------------------------ checkpoints

_MAGIC = b"CMIRCKPT"
_VERSION = 1


def save_checkpoint(model: CmirModel, path) -> None:
    cfg = {
        "modality_dims": model.config.modality_dims,
        "shared_dim": model.config.shared_dim,
        "hidden_dim": model.config.hidden_dim,
        "output_dim": model.config.output_dim,
        "depth": model.config.depth,
        "seed": model.seed,
    }
    cfg_bytes = json.dumps(cfg, sort_keys=True).encode()
    params = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            name_bytes = name.encode()
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<II", *p.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint file")
    return buf


def load_checkpoint(path) -> CmirModel:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(_MAGIC)) != _MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise CheckpointError(
                f"checkpoint version {version} unsupported (want {_VERSION})"
            )
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4))
        cfg = json.loads(_read_exact(fh, cfg_len))
        seed = cfg.pop("seed")
        model = CmirModel(ModelConfig(**cfg), seed)
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        by_name = dict(model.named_parameters())
        if count != len(by_name):
            raise CheckpointError(
                f"parameter count mismatch: file has {count}, model has "
                f"{len(by_name)}"
            )
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode()
            rows, cols = struct.unpack("<II", _read_exact(fh, 8))
            buf = _read_exact(fh, rows * cols * 8)
            if name not in by_name:
                raise CheckpointError(f"unknown parameter {name!r} in checkpoint")
            if by_name[name].shape != (rows, cols):
                raise CheckpointError(
                    f"shape mismatch for {name!r}: file {(rows, cols)}, "
                    f"model {by_name[name].shape}"
                )
            by_name[name].data = np.frombuffer(buf, dtype="<f8").reshape(
                rows, cols
            ).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")
    return model

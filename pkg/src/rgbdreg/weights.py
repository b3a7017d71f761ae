"""Parameter bundle: schema, seeded init, binary serialization, SGD.

File format (little-endian): magic "PMBF", version u32=1, tensor count
u32, then per tensor: name length u16, UTF-8 name, rank u8, dims u32 each,
raw float32 data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .exceptions import ConfigurationError, WeightsFormatError

MAGIC = b"PMBF"
VERSION = 1


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple[int, ...]
    fan_in: int


def level_dims(cfg: PipelineConfig) -> list[int]:
    """Feature dimension per level 0..5 (decoder mirrors the encoder)."""
    c0, c1, c2 = cfg.channels
    return [c0, c1, c2, c2, c1, c0]


def build_schema(cfg: PipelineConfig) -> list[TensorSpec]:
    c0, c1, c2 = cfg.channels
    out = cfg.out_dim
    specs: list[TensorSpec] = []

    def conv(name, cin, cout):
        specs.append(TensorSpec(f"{name}.w", (3, 3, cin, cout), 9 * cin))
        specs.append(TensorSpec(f"{name}.b", (cout,), 9 * cin))

    def lin(name, din, dout, bias=True):
        specs.append(TensorSpec(f"{name}.w", (din, dout), din))
        if bias:
            specs.append(TensorSpec(f"{name}.b", (dout,), din))

    # visual branch
    conv("visual.enc0.conv1", 3, c0)
    conv("visual.enc0.conv2", c0, c0)
    conv("visual.enc1.conv1", c0, c1)
    conv("visual.enc1.conv2", c1, c1)
    conv("visual.enc2.conv1", c1, c2)
    conv("visual.enc2.conv2", c2, c2)
    conv("visual.dec3.conv", c2, c2)
    conv("visual.dec4.conv", c2 + c1, c1)
    conv("visual.dec5.conv", c1 + c0, c0)
    lin("visual.head", c0, out)

    # geometric branch (input feature is the constant 1)
    for lvl, (din, dout) in enumerate([(1, c0), (c0, c1), (c1, c2)]):
        lin(f"geometric.enc{lvl}.nbr", 3 + din, dout)
        lin(f"geometric.enc{lvl}.post", dout, dout)
    lin("geometric.dec3.nbr", 3 + c2, c2)
    lin("geometric.dec3.post", c2, c2)
    lin("geometric.dec4.mlp", c2 + c1, c1)
    lin("geometric.dec5.mlp", c1 + c0, c0)
    lin("geometric.head", c0, out)

    # fusion blocks: per level, per direction
    for lvl, d in enumerate(level_dims(cfg)):
        for direction in ("v2g", "g2v"):
            lin(f"fusion.l{lvl}.{direction}.mlp1", d, d)
            lin(f"fusion.l{lvl}.{direction}.mlp2", d, d)
            lin(f"fusion.l{lvl}.{direction}.map", 2 * d, d, bias=False)
    lin("fusion.final", 2 * out, out, bias=False)
    return specs


def init_weights(cfg: PipelineConfig, seed: int) -> dict[str, np.ndarray]:
    """Uniform in [-a, a] with a = sqrt(1/fan_in); deterministic per seed."""
    rng = np.random.default_rng(seed)
    bundle = {}
    for spec in build_schema(cfg):
        a = np.sqrt(1.0 / spec.fan_in)
        bundle[spec.name] = rng.uniform(-a, a, size=spec.shape).astype(np.float32)
    return bundle


def validate_weights(bundle: dict[str, np.ndarray], cfg: PipelineConfig) -> None:
    expected = {s.name: s.shape for s in build_schema(cfg)}
    unknown = set(bundle) - set(expected)
    if unknown:
        raise ConfigurationError(f"unknown tensor names: {sorted(unknown)[:5]}")
    for name, shape in expected.items():
        if name not in bundle:
            raise ConfigurationError(f"missing tensor: {name}")
        if tuple(bundle[name].shape) != shape:
            raise ConfigurationError(
                f"{name}: expected shape {shape}, found {tuple(bundle[name].shape)}")


def save_weights(bundle: dict[str, np.ndarray], path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(bundle)))
        for name in sorted(bundle):
            arr = np.ascontiguousarray(bundle[name], dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise WeightsFormatError(f"truncated weights file at byte {off}")
        chunk = data[off:off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise WeightsFormatError("bad magic; not a weights file")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise WeightsFormatError(f"unsupported version {version}")
    bundle: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        numel = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(take(4 * numel), dtype="<f4").reshape(shape)
        if name in bundle:
            raise WeightsFormatError(f"duplicate tensor name: {name}")
        bundle[name] = arr.copy()
    if off != len(data):
        raise WeightsFormatError("trailing bytes after last tensor")
    return bundle


def sgd_step(weights: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float, weight_decay: float = 1e-6) -> dict[str, np.ndarray]:
    """theta <- theta - lr * (g + wd * theta); returns a new bundle."""
    if lr <= 0:
        raise ConfigurationError("learning rate must be positive")
    out = {}
    for name, theta in weights.items():
        g = grads.get(name)
        if g is None:
            out[name] = theta.copy()
            continue
        if g.shape != theta.shape:
            raise ConfigurationError(f"{name}: gradient shape {g.shape} != {theta.shape}")
        out[name] = (theta - lr * (g + weight_decay * theta)).astype(np.float32)
    return out

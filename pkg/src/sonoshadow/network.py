"""Shadow-aware autoencoder: one conv encoder, two deconv decoders.

The encoder downsamples with strided convolutions; each decoder mirrors it
with transposed convolutions back to a single-channel sigmoid map. The
shadow head predicts a multiplicative shadow field, the content head the
shadow-free scene, and their pixelwise product reconstructs the input.

Checkpoints are a single binary file: magic ``SHDW``, format version,
a JSON header describing the architecture and tensor layout, then raw
little-endian float32 payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .autodiff import Tensor, conv2d, deconv2d, hadamard, leaky_relu, sigmoid

__all__ = [
    "ArchConfig",
    "LayerParams",
    "ModelParams",
    "ForwardOut",
    "CheckpointError",
    "init_params",
    "forward",
    "infer_shadow",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"SHDW"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class ArchConfig:
    input_size: tuple[int, int] = (64, 64)  # (height, width)
    enc_channels: tuple[int, ...] = (16, 32, 64, 128)
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    slope: float = 0.1

    def __post_init__(self):
        if not self.enc_channels:
            raise ValueError("enc_channels must not be empty")
        if any(c <= 0 for c in self.enc_channels):
            raise ValueError(f"channel counts must be positive: {self.enc_channels}")
        if self.kernel <= 0 or self.stride <= 0 or self.padding < 0:
            raise ValueError("bad kernel/stride/padding")
        if not 0.0 <= self.slope < 1.0:
            raise ValueError(f"slope {self.slope} outside [0, 1)")
        for extent in self.input_size:
            for _ in self.enc_channels:
                down = (extent + 2 * self.padding - self.kernel) / self.stride + 1
                if down <= 0 or down != int(down):
                    raise ValueError(
                        f"input size {self.input_size} does not survive "
                        f"{len(self.enc_channels)} stride-{self.stride} layers"
                    )
                up = (int(down) - 1) * self.stride - 2 * self.padding + self.kernel
                if up != extent:
                    raise ValueError(
                        f"kernel={self.kernel} stride={self.stride} padding={self.padding} "
                        f"is not shape-exact at extent {extent}"
                    )
                extent = int(down)

    @property
    def depth(self) -> int:
        return len(self.enc_channels)

    def latent_size(self) -> tuple[int, int, int]:
        """(channels, height, width) of the bottleneck."""
        h, w = self.input_size
        for _ in self.enc_channels:
            h = (h + 2 * self.padding - self.kernel) // self.stride + 1
            w = (w + 2 * self.padding - self.kernel) // self.stride + 1
        return (self.enc_channels[-1], h, w)

    def to_dict(self) -> dict:
        return {
            "input_size": list(self.input_size),
            "enc_channels": list(self.enc_channels),
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
            "slope": self.slope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {"input_size", "enc_channels", "kernel", "stride", "padding", "slope"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown ArchConfig keys {sorted(extra)}")
        kwargs = dict(d)
        if "input_size" in kwargs:
            kwargs["input_size"] = (int(d["input_size"][0]), int(d["input_size"][1]))
        if "enc_channels" in kwargs:
            kwargs["enc_channels"] = tuple(int(c) for c in d["enc_channels"])
        return cls(**kwargs)


@dataclass
class LayerParams:
    weight: Tensor
    bias: Tensor


@dataclass
class ModelParams:
    arch: ArchConfig
    encoder: list[LayerParams] = field(default_factory=list)
    shadow_decoder: list[LayerParams] = field(default_factory=list)
    content_decoder: list[LayerParams] = field(default_factory=list)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for prefix, layers in (
            ("enc", self.encoder),
            ("dec_s", self.shadow_decoder),
            ("dec_c", self.content_decoder),
        ):
            for i, layer in enumerate(layers):
                yield f"{prefix}.{i}.weight", layer.weight
                yield f"{prefix}.{i}.bias", layer.bias

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _encoder_channels(arch: ArchConfig) -> list[tuple[int, int]]:
    ins = (1,) + arch.enc_channels[:-1]
    return list(zip(ins, arch.enc_channels))


def _decoder_channels(arch: ArchConfig) -> list[tuple[int, int]]:
    rev = tuple(reversed(arch.enc_channels)) + (1,)
    return list(zip(rev[:-1], rev[1:]))


def init_params(arch: ArchConfig, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    """He-style uniform weights scaled for the leaky-ReLU stack; zero biases.

    Bound is sqrt(6 / ((1 + slope^2) * fan_in)) per layer, which keeps
    activation variance roughly constant through the depth of the network.
    The plain sqrt(1 / fan_in) bound loses a factor ~0.4 of signal std per
    layer here and leaves the eight-layer stack outputting its biases.

    Draw order is fixed (encoder, shadow decoder, content decoder; weight
    before bias) so a given rng state always yields the same model.
    """
    k = arch.kernel
    gain = 6.0 / (1.0 + arch.slope * arch.slope)

    def conv_layer(c_in: int, c_out: int) -> LayerParams:
        bound = np.sqrt(gain / (c_in * k * k))
        w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
        return LayerParams(
            weight=Tensor(w.astype(dtype), requires_grad=True),
            bias=Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True),
        )

    def deconv_layer(c_in: int, c_out: int) -> LayerParams:
        bound = np.sqrt(gain / (c_in * k * k))
        w = rng.uniform(-bound, bound, size=(c_in, c_out, k, k))
        return LayerParams(
            weight=Tensor(w.astype(dtype), requires_grad=True),
            bias=Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True),
        )

    params = ModelParams(arch=arch)
    for c_in, c_out in _encoder_channels(arch):
        params.encoder.append(conv_layer(c_in, c_out))
    for layers in (params.shadow_decoder, params.content_decoder):
        for c_in, c_out in _decoder_channels(arch):
            layers.append(deconv_layer(c_in, c_out))
    return params


class ForwardOut(NamedTuple):
    latent: Tensor
    shadow: Tensor
    content: Tensor
    recon: Tensor


def _encode(params: ModelParams, x: Tensor) -> Tensor:
    arch = params.arch
    h = x
    for layer in params.encoder:
        h = conv2d(h, layer.weight, layer.bias, stride=arch.stride, padding=arch.padding)
        h = leaky_relu(h, arch.slope)
    return h


def _decode(params: ModelParams, layers: list[LayerParams], z: Tensor) -> Tensor:
    arch = params.arch
    h = z
    for i, layer in enumerate(layers):
        h = deconv2d(h, layer.weight, layer.bias, stride=arch.stride, padding=arch.padding)
        if i < len(layers) - 1:
            h = leaky_relu(h, arch.slope)
    return sigmoid(h)


def forward(params: ModelParams, x: Tensor) -> ForwardOut:
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"expected input [n, 1, h, w], got {x.shape}")
    if x.shape[2:] != params.arch.input_size:
        raise ValueError(
            f"input {x.shape[2:]} does not match model input size {params.arch.input_size}"
        )
    z = _encode(params, x)
    shadow = _decode(params, params.shadow_decoder, z)
    content = _decode(params, params.content_decoder, z)
    recon = hadamard(shadow, content)
    return ForwardOut(latent=z, shadow=shadow, content=content, recon=recon)


def infer_shadow(params: ModelParams, x: Tensor) -> Tensor:
    """Shadow map only; no gradient bookkeeping needed by callers."""
    return forward(params, x).shadow


def save_checkpoint(path, params: ModelParams, extra: dict | None = None, meta: dict | None = None) -> None:
    """Serialize model tensors (plus optional named extras) to one file.

    `extra` maps names to float32 arrays stored alongside the model, e.g.
    optimizer state; `meta` is a small JSON-compatible dict (step counters).
    """
    tensors: list[tuple[str, np.ndarray]] = []
    for name, t in params.named_parameters():
        tensors.append((name, np.ascontiguousarray(t.data, dtype="<f4")))
    for name, arr in (extra or {}).items():
        tensors.append((name, np.ascontiguousarray(arr, dtype="<f4")))

    entries = []
    offset = 0
    for name, arr in tensors:
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes}
        )
        offset += arr.nbytes
    header = {
        "arch": params.arch.to_dict(),
        "tensors": entries,
        "meta": dict(meta or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[ModelParams, dict, dict]:
    """Inverse of save_checkpoint: returns (params, extra arrays, meta)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(raw) < 12 + header_len:
        raise CheckpointError(f"{path} is truncated inside the header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None

    try:
        arch = ArchConfig.from_dict(header["arch"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad architecture record: {exc}") from None

    payload = raw[12 + header_len :]
    arrays: dict[str, np.ndarray] = {}
    end = 0
    for entry in header.get("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        offset, nbytes = entry["offset"], entry["nbytes"]
        if offset + nbytes > len(payload):
            raise CheckpointError(f"tensor {name} extends past end of file")
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4")
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"tensor {name}: {arr.size} values for shape {shape}")
        arrays[name] = arr.reshape(shape).copy()
        end = max(end, offset + nbytes)
    if end != len(payload):
        raise CheckpointError(f"{len(payload) - end} unclaimed payload bytes")

    params = ModelParams(arch=arch)
    for prefix, layers, shapes in (
        ("enc", params.encoder, _encoder_channels(arch)),
        ("dec_s", params.shadow_decoder, _decoder_channels(arch)),
        ("dec_c", params.content_decoder, _decoder_channels(arch)),
    ):
        for i, (c_in, c_out) in enumerate(shapes):
            try:
                w = arrays.pop(f"{prefix}.{i}.weight")
                b = arrays.pop(f"{prefix}.{i}.bias")
            except KeyError as exc:
                raise CheckpointError(f"checkpoint is missing tensor {exc.args[0]}") from None
            if prefix == "enc":
                want = (c_out, c_in, arch.kernel, arch.kernel)
            else:
                want = (c_in, c_out, arch.kernel, arch.kernel)
            if w.shape != want or b.shape != (c_out,):
                raise CheckpointError(
                    f"tensor {prefix}.{i} has shape {w.shape}/{b.shape}, expected {want}/({c_out},)"
                )
            layers.append(
                LayerParams(
                    weight=Tensor(w, requires_grad=True),
                    bias=Tensor(b, requires_grad=True),
                )
            )
    return params, arrays, header.get("meta", {})

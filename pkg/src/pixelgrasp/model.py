"""The encoder-decoder grasp network and its checkpoint format.

U-shaped fully convolutional net: per encoder level two 3x3 conv+relu
then 2x2 maxpool with channel width doubling, a two-conv bottleneck, and
a mirrored decoder (nearest x2 upsample, skip concat, two 3x3 conv+relu).
Four parallel 1x1 linear heads emit the grasp probability, cos/sin angle
encoding and width planes at input resolution.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from . import nn_core
from .data_ingest import read_tensor_from, write_tensor
from .errors import (
    BadMagic,
    CountMismatch,
    CrcMismatch,
    InvalidConfig,
    LengthMismatch,
    VersionUnsupported,
)
from .labels import GraspMaps
from .nn_core import Tensor, concat_channels, conv2d, linear, maxpool2, relu, upsample_nearest2

CHECKPOINT_MAGIC = b"UGCK"
CHECKPOINT_VERSION = 1

HEAD_NAMES = ("q", "cos2phi", "sin2phi", "w")


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 4
    input_side: int = 304
    base_width: int = 16
    levels: int = 4
    up_mode: str = "nearest+conv"
    seed: int = 0

    def __post_init__(self):
        if self.in_channels not in (1, 2, 4):
            raise InvalidConfig(f"in_channels {self.in_channels} not in {{1, 2, 4}}")
        if self.base_width < 1:
            raise InvalidConfig("base_width must be >= 1")
        if self.levels < 1:
            raise InvalidConfig("levels must be >= 1")
        if self.input_side % (1 << self.levels) != 0:
            raise InvalidConfig(
                f"input_side {self.input_side} not divisible by 2^{self.levels}"
            )
        if self.up_mode != "nearest+conv":
            raise InvalidConfig(f"unsupported up_mode {self.up_mode!r}")


def conv_param_count(cin: int, cout: int, k: int) -> int:
    """Kernel plus bias element count for one convolution."""
    return k * k * cin * cout + cout


def _layer_plan(config: ModelConfig):
    """(name, cin, cout, k) for every convolution, in declaration order."""
    plan = []
    prev = config.in_channels
    for lvl in range(config.levels):
        c = config.base_width << lvl
        plan.append((f"enc{lvl}.conv1", prev, c, 3))
        plan.append((f"enc{lvl}.conv2", c, c, 3))
        prev = c
    cb = config.base_width << config.levels
    plan.append(("bottleneck.conv1", prev, cb, 3))
    plan.append(("bottleneck.conv2", cb, cb, 3))
    prev = cb
    for lvl in reversed(range(config.levels)):
        c = config.base_width << lvl
        plan.append((f"dec{lvl}.conv1", prev + c, c, 3))
        plan.append((f"dec{lvl}.conv2", c, c, 3))
        prev = c
    for head in HEAD_NAMES:
        plan.append((f"head.{head}", prev, 1, 1))
    return plan


def param_count(config: ModelConfig) -> int:
    """Closed-form count of all kernel and bias elements."""
    return sum(conv_param_count(cin, cout, k) for _, cin, cout, k in _layer_plan(config))


class GraspNet:
    """Built network: parameter tensors plus the forward pass."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self._params: list[tuple[str, Tensor, Tensor]] = []
        for name, cin, cout, k in _layer_plan(config):
            # He-uniform with the standard conv gain (leaky slope sqrt(5)),
            # i.e. bound sqrt(1/fan_in); the wider sqrt(6/fan_in) bound
            # measurably stalls training on sparse grasp targets
            fan_in = cin * k * k
            limit = np.sqrt(1.0 / fan_in)
            weight = rng.uniform(-limit, limit, size=(cout, cin, k, k)).astype(np.float32)
            bias = rng.uniform(-limit, limit, size=cout).astype(np.float32)
            self._params.append((
                name,
                nn_core.parameter(weight, name=f"{name}.weight"),
                nn_core.parameter(bias, name=f"{name}.bias"),
            ))
        self._by_name = {name: (w, b) for name, w, b in self._params}

    @property
    def parameters(self) -> list[Tensor]:
        """All parameter tensors in declaration order (weight, bias pairs)."""
        out = []
        for _, w, b in self._params:
            out.extend((w, b))
        return out

    def param_element_count(self) -> int:
        return sum(p.data.size for p in self.parameters)

    def _block(self, x, name):
        w1, b1 = self._by_name[f"{name}.conv1"]
        w2, b2 = self._by_name[f"{name}.conv2"]
        return relu(conv2d(relu(conv2d(x, w1, b1)), w2, b2))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """(B, C, H, W) -> four (B, 1, H, W) planes (q, cos2phi, sin2phi, w)."""
        if x.data.ndim != 4 or x.data.shape[1] != self.config.in_channels:
            raise InvalidConfig(
                f"expected (B, {self.config.in_channels}, H, W), got {x.data.shape}"
            )
        skips = []
        h = x
        for lvl in range(self.config.levels):
            h = self._block(h, f"enc{lvl}")
            skips.append(h)
            h = maxpool2(h)
        h = self._block(h, "bottleneck")
        for lvl in reversed(range(self.config.levels)):
            h = concat_channels(upsample_nearest2(h), skips[lvl])
            h = self._block(h, f"dec{lvl}")
        heads = []
        for head in HEAD_NAMES:
            w, b = self._by_name[f"head.{head}"]
            heads.append(linear(conv2d(h, w, b)))
        return tuple(heads)

    def predict(self, planes: np.ndarray) -> GraspMaps:
        """Inference on a single (C, H, W) input; returns numpy grasp maps."""
        x = Tensor(np.asarray(planes, dtype=np.float32)[None])
        q, c, s, w = self.forward(x)
        return GraspMaps(q=q.data[0, 0], cos2phi=c.data[0, 0],
                         sin2phi=s.data[0, 0], w=w.data[0, 0])


def build(config: ModelConfig) -> GraspNet:
    return GraspNet(config)


# --------------------------------------------------------------------------
# Checkpoint serialization
# --------------------------------------------------------------------------
# Layout: "UGCK" | version u32 LE | config JSON length u32 LE | config JSON |
# one tensor record per parameter in declaration order | CRC32 u32 LE over
# everything preceding it.

def save(net: GraspNet) -> bytes:
    body = bytearray(CHECKPOINT_MAGIC)
    body += struct.pack("<I", CHECKPOINT_VERSION)
    cfg = json.dumps(asdict(net.config), sort_keys=True).encode("utf-8")
    body += struct.pack("<I", len(cfg))
    body += cfg
    for p in net.parameters:
        body += write_tensor(p.data)
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    return bytes(body)


def load(data: bytes) -> GraspNet:
    if len(data) < 16:
        raise LengthMismatch("checkpoint shorter than fixed header")
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"expected {CHECKPOINT_MAGIC!r}, got {data[:4]!r}")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CrcMismatch("checkpoint CRC32 does not validate")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionUnsupported(f"checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", data, 8)
    cfg_end = 12 + cfg_len
    if cfg_end > len(data) - 4:
        raise LengthMismatch("config extends past checkpoint end")
    try:
        cfg_doc = json.loads(data[12:cfg_end].decode("utf-8"))
        config = ModelConfig(**cfg_doc)
    except (ValueError, TypeError) as exc:
        raise InvalidConfig(f"unreadable embedded config: {exc}")

    net = GraspNet(config)
    offset = cfg_end
    total = 0
    for p in net.parameters:
        if offset >= len(data) - 4:
            raise CountMismatch("fewer parameter records than the config requires")
        arr, offset = read_tensor_from(data, offset)
        if arr.shape != p.data.shape:
            raise CountMismatch(f"parameter {p.name}: stored {arr.shape}, expected {p.data.shape}")
        p.data = arr
        total += arr.size
    if offset != len(data) - 4:
        raise CountMismatch("extra parameter bytes after the declared set")
    if total != param_count(config):
        raise CountMismatch(f"{total} stored elements, config computes {param_count(config)}")
    return net


def save_file(path, net: GraspNet) -> None:
    with open(path, "wb") as f:
        f.write(save(net))


def load_file(path) -> GraspNet:
    with open(path, "rb") as f:
        return load(f.read())

"""Random weights, supermasks and masked (hidden-network) weights.

Weights come from a counter-based generator (Philox4x64 from numpy) keyed on
``(seed, layer)``; the counter is the weight's linear coordinate, so any
coordinate can be regenerated on its own and the result never depends on
traversal order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netspec import NetworkSpec

MASK_MAGIC = b"SMSK"
MASK_VERSION = 1
_MASK_HEADER = struct.Struct("<4sHIQd")  # magic, version, n_layers, seed, sparsity
_MASK_ENTRY = struct.Struct("<IQ")  # layer index, bit count

_SEED_MASK = (1 << 64) - 1


class MaskFormatError(ValueError):
    pass


class MaskSizeError(ValueError):
    pass


@dataclass(frozen=True)
class WeightGenConfig:
    seed: int = 0
    weight_bits: int = 4
    distribution: str = "uniform_signed"
    magnitude: int | None = None

    def __post_init__(self):
        if not 1 <= self.weight_bits <= 8:
            raise ValueError("weight_bits must be in [1, 8]")
        if self.distribution not in ("uniform_signed", "sign_constant"):
            raise ValueError(f"unknown distribution {self.distribution!r}")

    @property
    def sign_magnitude(self) -> int:
        if self.magnitude is not None:
            return self.magnitude
        return max(1, (1 << (self.weight_bits - 1)) - 1)


def _key(seed: int, layer: int) -> list[int]:
    return [seed & _SEED_MASK, layer & _SEED_MASK]


def _raw(seed: int, layer: int, start: int, count: int) -> np.ndarray:
    """``count`` raw 64-bit draws beginning at linear counter ``start``."""
    block, offset = divmod(start, 4)
    bg = np.random.Philox(key=_key(seed, layer), counter=[block, 0, 0, 0])
    return bg.random_raw(offset + count)[offset:]


def _to_weights(cfg: WeightGenConfig, raw: np.ndarray) -> np.ndarray:
    b = cfg.weight_bits
    if cfg.distribution == "uniform_signed":
        top = (raw >> np.uint64(64 - b)).astype(np.int64)
        return top - (1 << (b - 1))
    sign = (raw >> np.uint64(63)).astype(np.int64)
    return np.where(sign == 1, -cfg.sign_magnitude, cfg.sign_magnitude).astype(np.int64)


def linear_index(shape: tuple[int, int, int, int], coord: tuple[int, int, int, int]) -> int:
    k_h, k_w, c_in, c_out = coord
    kh, kw, ci, co = shape
    if not (0 <= k_h < kh and 0 <= k_w < kw and 0 <= c_in < ci and 0 <= c_out < co):
        raise IndexError(f"coordinate {coord} outside weight shape {shape}")
    return ((k_h * kw + k_w) * ci + c_in) * co + c_out


def generate_weight(cfg: WeightGenConfig, layer: int, coord, shape) -> int:
    """Weight at ``coord = (k_h, k_w, c_in, c_out)`` of a layer with weight ``shape``."""
    idx = linear_index(tuple(shape), tuple(coord))
    return int(_to_weights(cfg, _raw(cfg.seed, layer, idx, 1))[0])


def weight_block(cfg: WeightGenConfig, layer: int, shape, k_h: int | None = None, k_w: int | None = None) -> np.ndarray:
    """All weights of a layer, or of one kernel pixel when ``k_h``/``k_w`` are given."""
    kh, kw, ci, co = shape
    if k_h is None:
        return _to_weights(cfg, _raw(cfg.seed, layer, 0, kh * kw * ci * co)).reshape(shape)
    start = linear_index(tuple(shape), (k_h, k_w, 0, 0))
    return _to_weights(cfg, _raw(cfg.seed, layer, start, ci * co)).reshape(ci, co)


# ---------------------------------------------------------------------------
# supermasks


@dataclass(eq=False)
class Supermask:
    """Packed one-bit-per-weight masks, keyed by layer index."""

    bits: dict[int, np.ndarray]
    sizes: dict[int, int]
    seed: int = 0
    requested: float = 0.0
    _unpacked: dict = field(default_factory=dict, repr=False)

    def layer_bits(self, layer: int) -> np.ndarray:
        if layer not in self._unpacked:
            self._unpacked[layer] = np.unpackbits(
                self.bits[layer], count=self.sizes[layer], bitorder="little"
            )
        return self._unpacked[layer]

    def layer_mask(self, layer: int, shape) -> np.ndarray:
        n = int(np.prod(shape))
        if self.sizes.get(layer) != n:
            raise MaskSizeError(f"layer {layer}: mask has {self.sizes.get(layer)} bits, weights need {n}")
        return self.layer_bits(layer).reshape(shape)

    def popcount(self, layer: int | None = None) -> int:
        if layer is None:
            return sum(self.popcount(l) for l in self.sizes)
        return int(self.layer_bits(layer).sum())

    @property
    def bit_count(self) -> int:
        return sum(self.sizes.values())

    @property
    def sparsity(self) -> float:
        """Fraction of ones (kept weights)."""
        return self.popcount() / self.bit_count if self.bit_count else 0.0

    def layer_sparsity(self, layer: int) -> float:
        return self.popcount(layer) / self.sizes[layer] if self.sizes[layer] else 0.0

    def __eq__(self, other):
        if not isinstance(other, Supermask):
            return NotImplemented
        return self.sizes == other.sizes and all(
            np.array_equal(self.bits[l], other.bits[l]) for l in self.sizes
        )

    def check(self, net: NetworkSpec) -> None:
        want = {i: net.layers[i].n_weights for i in net.weighted_layers()}
        if want != self.sizes:
            raise MaskSizeError(f"mask layer sizes {self.sizes} do not match network {want}")


def ones_count(sparsity: float, n: int) -> int:
    """Kept-weight count for a layer: ``sparsity * n`` rounded half-up."""
    return int(np.floor(sparsity * n + 0.5))


def random_supermask(seed: int, net: NetworkSpec, sparsity: float) -> Supermask:
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError("sparsity must lie in [0, 1]")
    bits, sizes = {}, {}
    for i in net.weighted_layers():
        n = net.layers[i].n_weights
        k = ones_count(sparsity, n)
        rng = np.random.Generator(np.random.Philox(key=[seed & _SEED_MASK, (1 << 63) | i]))
        flat = np.zeros(n, dtype=np.uint8)
        flat[rng.choice(n, size=k, replace=False)] = 1
        bits[i] = np.packbits(flat, bitorder="little")
        sizes[i] = n
    return Supermask(bits, sizes, seed, float(sparsity))


def mask_from_arrays(arrays: dict[int, np.ndarray], seed: int = 0) -> Supermask:
    bits = {l: np.packbits(np.asarray(a, dtype=np.uint8).ravel() & 1, bitorder="little") for l, a in arrays.items()}
    sizes = {l: int(np.asarray(a).size) for l, a in arrays.items()}
    m = Supermask(bits, sizes, seed)
    m.requested = m.sparsity
    return m


def save_supermask(mask: Supermask, path: str | Path) -> None:
    layers = sorted(mask.sizes)
    out = [_MASK_HEADER.pack(MASK_MAGIC, MASK_VERSION, len(layers), mask.seed & _SEED_MASK, mask.requested)]
    out += [_MASK_ENTRY.pack(l, mask.sizes[l]) for l in layers]
    out += [mask.bits[l].tobytes() for l in layers]
    Path(path).write_bytes(b"".join(out))


def load_supermask(path: str | Path, net: NetworkSpec | None = None) -> Supermask:
    data = Path(path).read_bytes()
    if len(data) < _MASK_HEADER.size:
        raise MaskFormatError("truncated mask header")
    magic, version, n_layers, seed, sparsity = _MASK_HEADER.unpack_from(data, 0)
    if magic != MASK_MAGIC:
        raise MaskFormatError(f"bad magic {magic!r}")
    if version != MASK_VERSION:
        raise MaskFormatError(f"unsupported mask version {version}")
    pos = _MASK_HEADER.size
    if len(data) < pos + n_layers * _MASK_ENTRY.size:
        raise MaskFormatError("truncated layer table")
    entries = []
    for _ in range(n_layers):
        entries.append(_MASK_ENTRY.unpack_from(data, pos))
        pos += _MASK_ENTRY.size
    bits, sizes = {}, {}
    for layer, count in entries:
        nbytes = (count + 7) // 8
        if pos + nbytes > len(data):
            raise MaskFormatError(f"layer {layer}: payload truncated")
        bits[layer] = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=pos).copy()
        sizes[layer] = count
        pos += nbytes
    if pos != len(data):
        raise MaskFormatError(f"{len(data) - pos} trailing bytes")
    mask = Supermask(bits, sizes, seed, sparsity)
    if net is not None:
        mask.check(net)
    return mask


# ---------------------------------------------------------------------------
# masked weights


@dataclass(frozen=True)
class MaskedWeights:
    """Effective integer weights, (K, K, C_in, C_out) per weighted layer."""

    layers: dict[int, np.ndarray]

    def __getitem__(self, layer: int) -> np.ndarray:
        return self.layers[layer]

    def __contains__(self, layer):
        return layer in self.layers

    def nonzero(self, layer: int | None = None) -> int:
        if layer is None:
            return sum(int(np.count_nonzero(w)) for w in self.layers.values())
        return int(np.count_nonzero(self.layers[layer]))


def materialize(cfg: WeightGenConfig, mask: Supermask, net: NetworkSpec, raw: MaskedWeights | None = None) -> MaskedWeights:
    """Apply ``mask`` to generated weights (or to ``raw`` when given)."""
    mask.check(net)
    out = {}
    for i in net.weighted_layers():
        shape = net.layers[i].weight_shape()
        w = raw[i] if raw is not None else weight_block(cfg, i, shape)
        out[i] = w * mask.layer_mask(i, shape)
    return MaskedWeights(out)

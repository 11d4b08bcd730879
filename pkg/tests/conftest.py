import numpy as np
import pytest
from hypothesis import strategies as st

from lptsim.netspec import CoreGeometry, LayerSpec, NetworkSpec, QTensor, Quant

# 4 columns x 4 rows x 8 clusters x 8 bits = 128 bytes per core: small enough
# that 8x8 and 16x16 maps must be tiled and strided maps trigger concatenation
SMALL_GEOM = CoreGeometry(tile_width=4, tile_height=4, channel_depth=8, precision=8, core_count=3, tmem_capacity=4096)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[n])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def small_geom():
    return SMALL_GEOM


def rand_act(rng, shape, signed=False):
    if signed:
        return QTensor(rng.integers(-128, 128, size=shape), 8, True)
    return QTensor(rng.integers(0, 256, size=shape))


@st.composite
def quants(draw, channels):
    relu = draw(st.booleans())
    shift = draw(st.integers(0, 7))
    if draw(st.booleans()):
        mult = tuple(draw(st.lists(st.integers(1, 4), min_size=channels, max_size=channels)))
    else:
        mult = draw(st.integers(1, 4))
    return Quant(mult, shift, relu)


@st.composite
def random_nets(draw, max_layers=20, sides=(8, 16), max_ch=8, head=True):
    """Residual nets of conv (K in {1, 3}), pooling and non-overlapping
    residual blocks, optionally closed by a global pool and fc head."""
    side = draw(st.sampled_from(sides))
    cin = draw(st.integers(1, max_ch))
    shape = [side, side, cin]
    layers: list[LayerSpec] = []
    edges: list[tuple[int, int]] = []
    budget = draw(st.integers(1, max_layers))
    strides_left = 2

    def conv(cin, cout, k, s, src=None, q=None):
        return LayerSpec("conv", k, s, cin, cout, "block", q or draw(quants(cout)), src)

    while len(layers) < budget:
        room = budget - len(layers)
        can_stride = strides_left > 0 and shape[0] >= 4
        op = draw(st.sampled_from(["conv", "conv", "pool", "block", "dsblock"]))
        c = shape[2]
        if op == "block" and room >= 3:
            x = len(layers) - 1
            mid = draw(st.integers(1, max_ch))
            layers.append(conv(c, mid, draw(st.sampled_from([1, 3])), 1))
            layers.append(conv(mid, c, draw(st.sampled_from([1, 3])), 1))
            layers.append(LayerSpec("residual_add", quant=draw(quants(c))))
            edges.append((x, len(layers) - 1))
        elif op == "dsblock" and room >= 4 and can_stride:
            x = len(layers) - 1
            cout = draw(st.integers(1, max_ch))
            mid = draw(st.integers(1, max_ch))
            layers.append(conv(c, cout, 1, 2, src=x))
            layers.append(conv(c, mid, 1, 1, src=x))
            layers.append(conv(mid, cout, 3, 2))
            layers.append(LayerSpec("residual_add", quant=draw(quants(cout))))
            edges.append((len(layers) - 4, len(layers) - 1))
            shape = [shape[0] // 2, shape[1] // 2, cout]
            strides_left -= 1
        elif op == "pool":
            kind = draw(st.sampled_from(["pool_max", "pool_avg"]))
            if can_stride and draw(st.booleans()):
                k = draw(st.sampled_from([2, 3]))
                layers.append(LayerSpec(kind, k, 2, c, c))
                shape = [shape[0] // 2, shape[1] // 2, c]
                strides_left -= 1
            else:
                layers.append(LayerSpec(kind, 3, 1, c, c))
        else:
            k = draw(st.sampled_from([1, 3]))
            s = 2 if can_stride and draw(st.integers(0, 3)) == 0 else 1
            cout = draw(st.integers(1, max_ch))
            layers.append(conv(c, cout, k, s))
            shape = [shape[0] // s, shape[1] // s, cout]
            if s == 2:
                strides_left -= 1
    if head and draw(st.booleans()):
        c = shape[2]
        layers.append(LayerSpec("pool_avg", 1, 1, c, c, global_pool=True))
        layers.append(LayerSpec("fc", 1, 1, c, draw(st.integers(1, max_ch)), quant=Quant(1, 3, False)))
    return NetworkSpec(tuple(layers), (side, side, cin), tuple(edges), name="random")


def naive_conv(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Direct-summation zero-padded convolution, one output pixel at a time."""
    k = w.shape[0]
    pad = (k - 1) // 2
    h, wd, _ = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((oh, ow, w.shape[3]), dtype=np.int64)
    for oy in range(oh):
        for ox in range(ow):
            for kh in range(k):
                for kw in range(k):
                    iy, ix = oy * stride + kh - pad, ox * stride + kw - pad
                    if 0 <= iy < h and 0 <= ix < wd:
                        out[oy, ox] += x[iy, ix].astype(np.int64) @ w[kh, kw].astype(np.int64)
    return out


def naive_requant(acc: np.ndarray, quant: Quant) -> np.ndarray:
    m = quant.multipliers(acc.shape[-1])
    out = np.empty_like(acc)
    for idx in np.ndindex(acc.shape):
        v = int(acc[idx]) * int(m[idx[-1]])
        if quant.shift:
            v = (v + 2 ** (quant.shift - 1)) // 2**quant.shift
        lo, hi = (0, 255) if quant.relu else (-128, 127)
        out[idx] = min(max(v, lo), hi)
    return out

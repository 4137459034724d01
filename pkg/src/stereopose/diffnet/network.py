"""Mini stacked-hourglass keypoint network with a stereo disparity head.

Parameter names are prefixed by the component that owns them: ``h_f/``
(shared feature trunk), ``h_uv/`` (heatmap head) and ``h_D/`` (disparity
map head). Which trunk layers belong to ``h_f`` depends on the breakpoint.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Mapping

import numpy as np

from ..errors import InvalidConfig
from . import ops
from .params import ParamStore
from .tensor import Tensor, record_event

VARIANTS = ("D2S4", "D4S4", "D2S8", "D4S8")
BREAKPOINT_STRIDE = {"D2": 2, "D4": 4}
DISPARITY_STRIDE = {"S4": 4, "S8": 8}

Params = Mapping[str, Tensor]


@dataclass(frozen=True)
class NetConfig:
    breakpoint: str = "D4"
    disparity_stride: str = "S4"
    num_stacks: int = 2
    base_channels: int = 16
    heatmap_stride: int = 4
    net_w: int = 64
    net_h: int = 64
    num_joints: int = 21
    hourglass_depth: int = 2

    @classmethod
    def from_variant(cls, variant: str, **kwargs) -> "NetConfig":
        if variant not in VARIANTS:
            raise InvalidConfig(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
        return cls(breakpoint=variant[:2], disparity_stride=variant[2:], **kwargs)

    @property
    def variant(self) -> str:
        return self.breakpoint + self.disparity_stride

    @property
    def breakpoint_stride(self) -> int:
        return BREAKPOINT_STRIDE[self.breakpoint]

    @property
    def disparity_map_stride(self) -> int:
        return DISPARITY_STRIDE[self.disparity_stride]

    @property
    def heatmap_shape(self) -> tuple[int, int]:
        return (self.net_h // self.heatmap_stride, self.net_w // self.heatmap_stride)

    @property
    def disparity_shape(self) -> tuple[int, int]:
        s = self.disparity_map_stride
        return (self.net_h // s, self.net_w // s)

    @property
    def disparity_downsamples(self) -> int:
        return int(math.log2(self.disparity_map_stride // self.breakpoint_stride))

    @property
    def disparity_hourglass_depth(self) -> int:
        low = min(self.disparity_shape)
        return max(1, min(self.hourglass_depth, int(math.log2(low)) - 1))

    def validate(self) -> None:
        if self.breakpoint not in BREAKPOINT_STRIDE:
            raise InvalidConfig(f"breakpoint must be D2 or D4, got {self.breakpoint!r}")
        if self.disparity_stride not in DISPARITY_STRIDE:
            raise InvalidConfig(f"disparity stride must be S4 or S8, got {self.disparity_stride!r}")
        if self.heatmap_stride != 4:
            raise InvalidConfig("the hourglass trunk runs at stride 4; heatmap_stride must be 4")
        for name in ("num_stacks", "base_channels", "num_joints", "hourglass_depth"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        hg = self.heatmap_stride * 2 ** self.hourglass_depth
        dd = self.disparity_map_stride * 2 ** self.disparity_hourglass_depth
        for size in (self.net_w, self.net_h):
            if size < 8 or size % hg or size % dd:
                raise InvalidConfig(
                    f"network size {size} must be divisible by {hg} (heatmaps) and {dd} (disparity)")

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "NetConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = (s.strip() for s in line.partition("="))
            if key not in types:
                raise InvalidConfig(f"unknown network config key {key!r}")
            kwargs[key] = value if types[key] == "str" else int(value)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


class Conv:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int, k: int = 3,
                 stride: int = 1, rng: np.random.Generator | None = None, gain: float = 1.0):
        fan_in = cin * k * k
        bound = gain * math.sqrt(6.0 / fan_in)
        self.w = name + "/w"
        self.b = name + "/b"
        self.stride = stride
        store.add(self.w, rng.uniform(-bound, bound, size=(cout, cin, k, k)))
        store.add(self.b, np.zeros(cout))

    def __call__(self, p: Params, x: Tensor) -> Tensor:
        return ops.conv2d(x, p[self.w], p[self.b], stride=self.stride)


class Residual:
    """``x + conv(relu(conv(x)))`` with an identity skip."""

    def __init__(self, store, name, ch, rng):
        self.c1 = Conv(store, name + "/c1", ch, ch, 3, rng=rng)
        self.c2 = Conv(store, name + "/c2", ch, ch, 3, rng=rng, gain=0.1)

    def __call__(self, p, x):
        return ops.add(x, self.c2(p, ops.relu(self.c1(p, x))))


class Hourglass:
    def __init__(self, store, name, ch, depth, rng):
        self.up = Residual(store, name + "/up", ch, rng)
        self.low1 = Residual(store, name + "/low1", ch, rng)
        if depth > 1:
            self.inner = Hourglass(store, name + "/inner", ch, depth - 1, rng)
        else:
            self.inner = Residual(store, name + "/bottom", ch, rng)
        self.low3 = Residual(store, name + "/low3", ch, rng)

    def __call__(self, p, x):
        up = self.up(p, x)
        low = self.low1(p, ops.maxpool2(x))
        low = self.low3(p, self.inner(p, low))
        return ops.scale(ops.add(up, ops.upsample2_nearest(low)), 0.5)


@dataclass
class Network:
    """Graph handles for the three components.

    ``h_f(p, image)`` -> features at the breakpoint;
    ``h_uv(p, features)`` -> list of per-stack heatmaps ``(N, J, H/s, W/s)``;
    ``h_D(p, f_lr)`` -> disparity map ``(N, H_d, W_d)``.
    """

    cfg: NetConfig
    h_f: Callable[[Params, Tensor], Tensor]
    h_uv: Callable[[Params, Tensor], list]
    h_D: Callable[[Params, Tensor], Tensor]
    feature_channels: int


def build_network(cfg: NetConfig, rng_seed: int = 0) -> tuple[ParamStore, Network]:
    cfg.validate()
    rng = np.random.default_rng(rng_seed)
    store = ParamStore(np.float32)
    c, j = cfg.base_channels, cfg.num_joints
    d4 = cfg.breakpoint == "D4"
    trunk = "h_f" if d4 else "h_uv"

    stem = Conv(store, "h_f/stem", 3, c, 7, stride=2, rng=rng)
    res1 = Residual(store, f"{trunk}/res1", c, rng)
    res2 = Residual(store, "h_uv/res2", c, rng)
    stacks = []
    for i in range(cfg.num_stacks):
        name = f"h_uv/stack{i}"
        stack = {
            "hg": Hourglass(store, name + "/hg", c, cfg.hourglass_depth, rng),
            "res": Residual(store, name + "/res", c, rng),
            "lin": Conv(store, name + "/lin", c, c, 1, rng=rng),
            "heat": Conv(store, name + "/heat", c, j, 1, rng=rng, gain=0.5),
        }
        if i < cfg.num_stacks - 1:
            stack["merge_f"] = Conv(store, name + "/merge_f", c, c, 1, rng=rng, gain=0.5)
            stack["merge_h"] = Conv(store, name + "/merge_h", j, c, 1, rng=rng, gain=0.5)
        stacks.append(stack)

    d_in = Conv(store, "h_D/in", 2 * c, c, 1, rng=rng)
    d_hg = Hourglass(store, "h_D/hg", c, cfg.disparity_hourglass_depth, rng)
    d_res = Residual(store, "h_D/res", c, rng)
    d_out = Conv(store, "h_D/out", c, 1, 1, rng=rng, gain=0.5)

    def h_f(p, image):
        record_event("h_f")
        x = ops.relu(stem(p, image))
        if d4:
            x = ops.maxpool2(res1(p, x))
        return x

    def h_uv(p, f):
        x = f if d4 else ops.maxpool2(res1(p, f))
        x = res2(p, x)
        heats = []
        for i, st in enumerate(stacks):
            y = st["res"](p, st["hg"](p, x))
            y = ops.relu(st["lin"](p, y))
            h = st["heat"](p, y)
            heats.append(h)
            if "merge_f" in st:
                x = ops.add(ops.add(x, st["merge_f"](p, y)), st["merge_h"](p, h))
        return heats

    def h_D(p, f_lr):
        x = f_lr
        for _ in range(cfg.disparity_downsamples):
            record_event("disparity_downsample")
            x = ops.maxpool2(x)
        x = ops.relu(d_in(p, x))
        x = d_res(p, d_hg(p, x))
        out = d_out(p, x)
        n, _, hd, wd = out.shape
        return ops.reshape(out, (n, hd, wd))

    return store, Network(cfg=cfg, h_f=h_f, h_uv=h_uv, h_D=h_D, feature_channels=c)

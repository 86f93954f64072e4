"""Attention-augmented residual super-resolution network.

Layout (SRResNet backbone with two additions):

    head conv -> PReLU
    residual blocks: x + MHA(BN(conv(PReLU(BN(conv(x))))))
        with a multi-scale fusion block after selected blocks
    trunk conv -> BN, plus the head features (global skip)
    per x2 stage: conv to 4C -> pixel shuffle -> PReLU
    tail conv to the output channels
    optionally plus a bicubic upscale of the first input channels

The last option turns the network into a correction on top of bicubic
interpolation; it is off in the reference specs.

Multi-scale fusion runs a 1x1 conv and two 3x3 convs with dilations (2, 5)
in parallel, concatenates them, fuses back to C channels with a 1x1 conv and
adds the input.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..baselines import bicubic_upscale_array
from ..errors import NumericalFault
from . import autograd as ag

DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class ModelSpec:
    in_channels: int = 5
    out_channels: int = 2
    base_channels: int = 64
    n_res_blocks: int = 16
    n_heads: int = 4
    msff_after_blocks: tuple[int, ...] = (4, 8, 12)  # 1-based block counts
    msff_dilations: tuple[int, ...] = (2, 5)
    upscale: int = 2
    head_kernel: int = 9
    tail_kernel: int = 9
    global_skip: bool = True
    mha_position: str = "after_bn2"  # or "none"
    attn_pool: int = 1
    input_residual: bool = False  # add bicubic(input[:out_channels]) to the output

    def __post_init__(self):
        object.__setattr__(self, "msff_after_blocks", tuple(int(i) for i in self.msff_after_blocks))
        object.__setattr__(self, "msff_dilations", tuple(int(d) for d in self.msff_dilations))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.base_channels % self.n_heads:
            raise ValueError(f"n_heads={self.n_heads} must divide base_channels={self.base_channels}")
        if any(not 1 <= i <= self.n_res_blocks for i in self.msff_after_blocks):
            raise ValueError("msff_after_blocks entries must lie in [1, n_res_blocks]")
        if self.upscale < 1 or self.upscale & (self.upscale - 1):
            raise ValueError("upscale must be a power of two")
        if self.mha_position not in ("after_bn2", "none"):
            raise ValueError(f"unknown mha_position {self.mha_position!r}")
        if self.head_kernel % 2 == 0 or self.tail_kernel % 2 == 0:
            raise ValueError("head/tail kernels must have odd size")
        if self.input_residual and self.in_channels < self.out_channels:
            raise ValueError("input_residual needs in_channels >= out_channels")

    @property
    def n_upsample_stages(self) -> int:
        return int(round(math.log2(self.upscale)))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        d = json.loads(text)
        d["msff_after_blocks"] = tuple(d["msff_after_blocks"])
        d["msff_dilations"] = tuple(d["msff_dilations"])
        return cls(**d)

    def parameter_count(self) -> int:
        """Trainable scalars, from the layer formulas (BN running stats excluded)."""
        C = self.base_channels

        def conv(cin, cout, k):
            return cin * cout * k * k + cout

        head = conv(self.in_channels, C, self.head_kernel) + C
        mha = 0 if self.mha_position == "none" else 4 * (C * C + C)
        block = 2 * conv(C, C, 3) + 2 * 2 * C + C + mha
        branches = 1 + len(self.msff_dilations)
        msff = conv(C, C, 1) + len(self.msff_dilations) * conv(C, C, 3) + conv(branches * C, C, 1)
        trunk = conv(C, C, 3) + 2 * C
        up = self.n_upsample_stages * (conv(C, 4 * C, 3) + C)
        tail = conv(C, self.out_channels, self.tail_kernel)
        return head + self.n_res_blocks * block + len(self.msff_after_blocks) * msff + trunk + up + tail


PRIMARY_SPEC = ModelSpec()
SECONDARY_SPEC = ModelSpec(in_channels=4, n_res_blocks=18, base_channels=128)


@dataclass
class ParamStore:
    """Named parameters plus non-trainable buffers (BN running statistics)."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    mode: str = "f32"

    def count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.buffers.items()}, self.mode)


def init_params(spec: ModelSpec, seed: int = 0, mode: str = "f32") -> ParamStore:
    """Fan-in scaled uniform weights and biases, PReLU slope 0.25, BN gamma 1 / beta 0."""
    rng = np.random.Generator(np.random.PCG64(seed))
    dtype = DTYPES[mode]
    store = ParamStore(mode=mode)
    P, Bf = store.params, store.buffers
    C = spec.base_channels

    def conv(name, cin, cout, k):
        bound = 1.0 / math.sqrt(cin * k * k)
        P[name + ".w"] = rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype)
        P[name + ".b"] = rng.uniform(-bound, bound, cout).astype(dtype)

    def linear(name, n):
        bound = 1.0 / math.sqrt(n)
        P[name + ".w"] = rng.uniform(-bound, bound, (n, n)).astype(dtype)
        P[name + ".b"] = rng.uniform(-bound, bound, n).astype(dtype)

    def bn(name, n):
        P[name + ".gamma"] = np.ones(n, dtype)
        P[name + ".beta"] = np.zeros(n, dtype)
        Bf[name + ".running_mean"] = np.zeros(n, dtype)
        Bf[name + ".running_var"] = np.ones(n, dtype)

    def prelu(name, n):
        P[name + ".slope"] = np.full(n, 0.25, dtype)

    conv("head", spec.in_channels, C, spec.head_kernel)
    prelu("head.act", C)
    for i in range(spec.n_res_blocks):
        b = f"block{i}"
        conv(b + ".conv1", C, C, 3)
        bn(b + ".bn1", C)
        prelu(b + ".act", C)
        conv(b + ".conv2", C, C, 3)
        bn(b + ".bn2", C)
        if spec.mha_position != "none":
            for proj in ("q", "k", "v", "o"):
                linear(f"{b}.mha.{proj}", C)
        if (i + 1) in spec.msff_after_blocks:
            m = f"msff{i}"
            conv(m + ".branch0", C, C, 1)
            for j, _ in enumerate(spec.msff_dilations):
                conv(f"{m}.branch{j + 1}", C, C, 3)
            conv(m + ".fuse", C * (1 + len(spec.msff_dilations)), C, 1)
    conv("trunk", C, C, 3)
    bn("trunk.bn", C)
    for s in range(spec.n_upsample_stages):
        conv(f"up{s}", C, 4 * C, 3)
        prelu(f"up{s}.act", C)
    conv("tail", C, spec.out_channels, spec.tail_kernel)
    return store


class Graph:
    """Leaf tensors for one forward pass, keyed by parameter name."""

    def __init__(self, store: ParamStore, requires_grad: bool):
        self.leaves = {k: ag.Tensor(v, requires_grad, k) for k, v in store.params.items()}
        self.buffers = store.buffers

    def __getitem__(self, name):
        return self.leaves[name]

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.leaves.items()}


def conv(g: Graph, name, x, dilation=1):
    return ag.conv2d(x, g[name + ".w"], g[name + ".b"], dilation)


def batchnorm(g: Graph, name, x, training):
    return ag.batchnorm2d(x, g[name + ".gamma"], g[name + ".beta"], g.buffers[name + ".running_mean"],
                          g.buffers[name + ".running_var"], training)


def mha(g: Graph, name, x, n_heads, pool=1, keep_weights=None):
    y = ag.avg_pool2d(x, pool) if pool > 1 else x
    y = ag.mha_spatial(y, g[name + ".q.w"], g[name + ".q.b"], g[name + ".k.w"], g[name + ".k.b"],
                       g[name + ".v.w"], g[name + ".v.b"], g[name + ".o.w"], g[name + ".o.b"],
                       n_heads, keep_weights)
    return ag.upsample_nearest(y, pool) if pool > 1 else y


def residual_block(g: Graph, name, x, spec: ModelSpec, training, pool=1, keep_weights=None):
    y = conv(g, name + ".conv1", x)
    y = batchnorm(g, name + ".bn1", y, training)
    y = ag.prelu(y, g[name + ".act.slope"])
    y = conv(g, name + ".conv2", y)
    y = batchnorm(g, name + ".bn2", y, training)
    if spec.mha_position == "after_bn2":
        y = mha(g, name + ".mha", y, spec.n_heads, pool, keep_weights)
    return ag.add(x, y)


def msff_block(g: Graph, name, x, dilations):
    branches = [conv(g, name + ".branch0", x)]
    for j, d in enumerate(dilations):
        branches.append(conv(g, f"{name}.branch{j + 1}", x, d))
    fused = conv(g, name + ".fuse", ag.concat(branches, axis=1))
    return ag.add(x, fused)


def check_finite(store: ParamStore):
    for k, v in list(store.params.items()) + list(store.buffers.items()):
        if not np.all(np.isfinite(v)):
            raise NumericalFault("non-finite values in parameter", k)


def forward_graph(g: Graph, spec: ModelSpec, x, training: bool, attn_pool: int | None = None,
                  keep_weights=None) -> ag.Tensor:
    """Build the forward graph for a batch ``x`` of shape (B, in_channels, H, W)."""
    xt = x if isinstance(x, ag.Tensor) else ag.Tensor(np.asarray(x))
    if xt.shape[1] != spec.in_channels:
        raise ValueError(f"model expects {spec.in_channels} input channels, got {xt.shape[1]}")
    pool = spec.attn_pool if attn_pool is None else attn_pool
    h = ag.prelu(conv(g, "head", xt), g["head.act.slope"])
    y = h
    for i in range(spec.n_res_blocks):
        y = residual_block(g, f"block{i}", y, spec, training, pool, keep_weights)
        if (i + 1) in spec.msff_after_blocks:
            y = msff_block(g, f"msff{i}", y, spec.msff_dilations)
    y = batchnorm(g, "trunk.bn", conv(g, "trunk", y), training)
    if spec.global_skip:
        y = ag.add(y, h)
    for s in range(spec.n_upsample_stages):
        y = ag.prelu(ag.pixel_shuffle(conv(g, f"up{s}", y), 2), g[f"up{s}.act.slope"])
    out = conv(g, "tail", y)
    if spec.input_residual:
        out = ag.add(out, ag.Tensor(_bicubic_base(xt.data, spec)))
    return out


def _bicubic_base(x: np.ndarray, spec: ModelSpec) -> np.ndarray:
    lead = np.ascontiguousarray(x[:, :spec.out_channels].transpose(0, 2, 3, 1), dtype=np.float64)
    up = np.stack([bicubic_upscale_array(im, spec.upscale) for im in lead])
    return up.transpose(0, 3, 1, 2).astype(x.dtype)


def forward(store: ParamStore, spec: ModelSpec, x, training: bool = False, attn_pool: int | None = None) -> np.ndarray:
    """Inference (or a gradient-free training-mode pass) returning a numpy array."""
    check_finite(store)
    x = np.asarray(x, dtype=DTYPES[store.mode])
    out = forward_graph(Graph(store, False), spec, x, training, attn_pool).data
    if not np.all(np.isfinite(out)):
        raise NumericalFault("non-finite model output")
    return out

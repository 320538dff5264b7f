"""The anti-spoofing network.

Layout: a three-layer pre-activation conv stem over the raw waveform, five
stages of aggregated residual blocks with squeeze-excitation gating, and a
global-max-pool classifier head ending in a single sigmoid score per clip
(higher = more bonafide).

Width rules, with C = cardinality and d = bottleneck width:
  stage output channels   O_k = round(16 * width_scale) * C * 2^k,  k = 0..4
  per-branch width        d_k = d * 2^min(k, 3)
  grouped transform width M_k = C * d_k
Every stage's first block downsamples the time axis by stride 2. Under sum
aggregation the dense 1x1 expansion realizes the sum of per-branch
expansions; concat aggregation uses a grouped expansion whose output is the
channel concatenation of the branches.

Stem strides default to (16, 8, 2) with a k=3/s=2 max pool, taking a
64000-sample clip through lengths 4001 -> 501 -> 251 -> 125.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .errors import ConfigError, NumericsError, ShapeError
from .tensor import Tensor, kaiming_init

DEPTH_PRESETS = {18: (2, 2, 2, 2, 2), 34: (3, 4, 4, 3, 3), 50: (3, 4, 6, 3, 3), 101: (3, 4, 23, 3, 3)}


@dataclass(frozen=True)
class StemConfig:
    filters: tuple = (64, 128, 256)
    kernels: tuple = (196, 144, 100)
    strides: tuple = (16, 8, 2)
    activation: str = "relu"
    pool_k: int = 3
    pool_stride: int = 2

    def validate(self) -> None:
        for name in ("filters", "kernels", "strides"):
            if len(getattr(self, name)) != 3:
                raise ConfigError(f"stem {name} must have exactly three entries")
        if self.activation not in ("relu", "softmax_lastdim"):
            raise ConfigError(f"stem activation must be relu or softmax_lastdim, not {self.activation!r}")


@dataclass(frozen=True)
class PSAConfig:
    cardinality: int = 4
    bottleneck_width: int = 64
    depth_preset: int = 18
    width_scale: float = 1.0
    use_se: bool = True
    se_reduction: int = 16
    use_skip: bool = True
    spatial_dropout_rate: float = 0.2
    aggregation: str = "sum"
    stem: StemConfig = field(default_factory=StemConfig)
    input_len: int = 64000
    head_hidden: int = 1000

    @property
    def blocks_per_stage(self) -> tuple:
        return DEPTH_PRESETS[self.depth_preset]

    @property
    def stage_widths(self) -> list:
        base = int(round(16 * self.width_scale))
        return [base * self.cardinality * 2 ** k for k in range(5)]

    @property
    def branch_widths(self) -> list:
        return [self.bottleneck_width * 2 ** min(k, 3) for k in range(5)]

    def scaled_stem_filters(self) -> tuple:
        return tuple(max(1, int(round(f * self.width_scale))) for f in self.stem.filters)

    def validate(self) -> None:
        self.stem.validate()
        if self.cardinality < 1:
            raise ConfigError(f"cardinality must be >= 1, got {self.cardinality}")
        if self.bottleneck_width < 1:
            raise ConfigError(f"bottleneck_width must be >= 1, got {self.bottleneck_width}")
        if self.depth_preset not in DEPTH_PRESETS:
            raise ConfigError(f"depth_preset must be one of {sorted(DEPTH_PRESETS)}, got {self.depth_preset}")
        if not 0.0 <= self.spatial_dropout_rate < 1.0:
            raise ConfigError(f"spatial_dropout_rate must be in [0,1), got {self.spatial_dropout_rate}")
        if self.aggregation not in ("sum", "concat"):
            raise ConfigError(f"aggregation must be sum or concat, not {self.aggregation!r}")
        if int(round(16 * self.width_scale)) < 1:
            raise ConfigError(f"width_scale {self.width_scale} collapses the stage widths to zero")
        for k, o in enumerate(self.stage_widths):
            if self.use_se and o % self.se_reduction != 0:
                raise ConfigError(
                    f"stage {k + 1} width {o} is not divisible by se_reduction={self.se_reduction}")
            if self.aggregation == "concat" and o % self.cardinality != 0:
                raise ConfigError(
                    f"concat aggregation needs stage width {o} divisible by cardinality={self.cardinality}")
        if self.input_len < 1:
            raise ConfigError(f"input_len must be positive, got {self.input_len}")

    def to_kv(self) -> dict:
        return {
            "cardinality": str(self.cardinality),
            "bottleneck_width": str(self.bottleneck_width),
            "depth_preset": str(self.depth_preset),
            "width_scale": repr(self.width_scale),
            "use_se": str(int(self.use_se)),
            "se_reduction": str(self.se_reduction),
            "use_skip": str(int(self.use_skip)),
            "spatial_dropout_rate": repr(self.spatial_dropout_rate),
            "aggregation": self.aggregation,
            "input_len": str(self.input_len),
            "head_hidden": str(self.head_hidden),
            "stem_filters": ",".join(map(str, self.stem.filters)),
            "stem_kernels": ",".join(map(str, self.stem.kernels)),
            "stem_strides": ",".join(map(str, self.stem.strides)),
            "stem_activation": self.stem.activation,
            "stem_pool_k": str(self.stem.pool_k),
            "stem_pool_stride": str(self.stem.pool_stride),
        }

    @classmethod
    def from_kv(cls, kv: dict) -> "PSAConfig":
        def triple(s):
            return tuple(int(v) for v in s.split(","))

        stem = StemConfig(
            filters=triple(kv["stem_filters"]),
            kernels=triple(kv["stem_kernels"]),
            strides=triple(kv["stem_strides"]),
            activation=kv["stem_activation"],
            pool_k=int(kv["stem_pool_k"]),
            pool_stride=int(kv["stem_pool_stride"]),
        )
        return cls(
            cardinality=int(kv["cardinality"]),
            bottleneck_width=int(kv["bottleneck_width"]),
            depth_preset=int(kv["depth_preset"]),
            width_scale=float(kv["width_scale"]),
            use_se=bool(int(kv["use_se"])),
            se_reduction=int(kv["se_reduction"]),
            use_skip=bool(int(kv["use_skip"])),
            spatial_dropout_rate=float(kv["spatial_dropout_rate"]),
            aggregation=kv["aggregation"],
            stem=stem,
            input_len=int(kv["input_len"]),
            head_hidden=int(kv["head_hidden"]),
        )


class Module:
    """Tiny parameter/buffer/child registry with stable, documented names."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, "Module"] = {}

    def add_param(self, name: str, t: Tensor) -> Tensor:
        self._params[name] = t
        return t

    def add_buffer(self, name: str, a: np.ndarray) -> np.ndarray:
        self._buffers[name] = a
        return a

    def add_child(self, name: str, m: "Module") -> "Module":
        self._children[name] = m
        return m

    def named_parameters(self, prefix: str = "") -> dict:
        out = {}
        for n, t in self._params.items():
            out[prefix + n] = t
        for cn, c in self._children.items():
            out.update(c.named_parameters(prefix + cn + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict:
        out = {}
        for n, a in self._buffers.items():
            out[prefix + n] = a
        for cn, c in self._children.items():
            out.update(c.named_buffers(prefix + cn + "."))
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def modules(self) -> list:
        out = [self]
        for c in self._children.values():
            out.extend(c.modules())
        return out


class Conv1d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, groups: int = 1, bias: bool = True):
        super().__init__()
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.padding, self.groups = stride, padding, groups
        w = Tensor(np.empty((cout, cin // groups, k), np.float32), requires_grad=True)
        self.weight = self.add_param("weight", kaiming_init(w, (cin // groups) * k, rng))
        self.bias = self.add_param("bias", Tensor(np.zeros(cout, np.float32), requires_grad=True)) if bias else None

    def out_len(self, l: int) -> int:
        return (l + 2 * self.padding - self.k) // self.stride + 1

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class BatchNorm1d(Module):
    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.c, self.momentum, self.eps = c, momentum, eps
        self.gamma = self.add_param("gamma", Tensor(np.ones(c, np.float32), requires_grad=True))
        self.beta = self.add_param("beta", Tensor(np.zeros(c, np.float32), requires_grad=True))
        self.state = ops.BNState.for_channels(c)
        self.add_buffer("running_mean", self.state.running_mean)
        self.add_buffer("running_var", self.state.running_var)

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return ops.batch_norm1d(x, self.gamma, self.beta, self.state, mode, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator):
        super().__init__()
        self.fin, self.fout = fin, fout
        w = Tensor(np.empty((fout, fin), np.float32), requires_grad=True)
        self.weight = self.add_param("weight", kaiming_init(w, fin, rng))
        self.bias = self.add_param("bias", Tensor(np.zeros(fout, np.float32), requires_grad=True))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class SEGate(Module):
    """Squeeze (global average) and excite (reduce-expand fc pair, sigmoid gate)."""

    def __init__(self, c: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        if c % reduction != 0:
            raise ConfigError(f"SE gate needs channels ({c}) divisible by reduction ({reduction})")
        self.c = c
        self.fc1 = self.add_child("fc1", Linear(c, c // reduction, rng))
        self.fc2 = self.add_child("fc2", Linear(c // reduction, c, rng))

    def forward(self, x: Tensor) -> Tensor:
        n, c, _ = x.data.shape
        squeezed = ops.global_avg_pool(x).reshape(n, c)
        gate = ops.sigmoid(self.fc2.forward(ops.relu(self.fc1.forward(squeezed))))
        return ops.channel_scale(x, gate.reshape(n, c, 1))


class PSABlock(Module):
    """Pre-activation aggregated residual block.

    reduce 1x1 -> grouped 3-tap transform (cardinality branches) -> spatial
    dropout just before the aggregating 1x1 expansion -> SE gate -> shortcut.
    """

    def __init__(self, cin: int, cout: int, cfg: PSAConfig, branch_width: int,
                 stride: int, rng: np.random.Generator):
        super().__init__()
        card = cfg.cardinality
        m = card * branch_width
        self.cin, self.cout, self.m, self.stride = cin, cout, m, stride
        self.card = card
        self.dropout_rate = cfg.spatial_dropout_rate
        self.use_skip = cfg.use_skip
        self.bn1 = self.add_child("bn1", BatchNorm1d(cin))
        self.reduce = self.add_child("reduce", Conv1d(cin, m, 1, rng, bias=False))
        self.bn2 = self.add_child("bn2", BatchNorm1d(m))
        self.transform = self.add_child(
            "transform", Conv1d(m, m, 3, rng, stride=stride, padding=1, groups=card, bias=False))
        self.bn3 = self.add_child("bn3", BatchNorm1d(m))
        expand_groups = 1 if cfg.aggregation == "sum" else card
        self.expand = self.add_child("expand", Conv1d(m, cout, 1, rng, groups=expand_groups, bias=False))
        self.se = self.add_child("se", SEGate(cout, cfg.se_reduction, rng)) if cfg.use_se else None
        self.proj = None
        if cfg.use_skip and (stride != 1 or cin != cout):
            self.proj = self.add_child("proj", Conv1d(cin, cout, 1, rng, stride=stride, bias=False))

    def forward(self, x: Tensor, mode: str, rng: np.random.Generator | None = None) -> Tensor:
        h = ops.relu(self.bn1.forward(x, mode))
        t = self.reduce.forward(h)
        t = ops.relu(self.bn2.forward(t, mode))
        t = self.transform.forward(t)
        t = ops.relu(self.bn3.forward(t, mode))
        t = ops.spatial_dropout(t, self.dropout_rate, mode, rng)
        t = self.expand.forward(t)
        if self.se is not None:
            t = self.se.forward(t)
        if not self.use_skip:
            return t
        shortcut = self.proj.forward(h) if self.proj is not None else x
        return ops.merge([t, shortcut], "sum")


class Stem(Module):
    """Three pre-activation conv layers (norm -> activation -> conv), then max pool."""

    def __init__(self, cfg: PSAConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        filters = cfg.scaled_stem_filters()
        kernels, strides = cfg.stem.kernels, cfg.stem.strides
        self.activation = cfg.stem.activation
        cin = 1
        self.layers = []
        for i, (f, k, s) in enumerate(zip(filters, kernels, strides), start=1):
            bn = self.add_child(f"bn{i}", BatchNorm1d(cin))
            conv = self.add_child(f"conv{i}", Conv1d(cin, f, k, rng, stride=s, padding=k // 2))
            self.layers.append((bn, conv))
            cin = f
        self.out_channels = cin

    def out_len(self, l: int) -> int:
        for _, conv in self.layers:
            l = conv.out_len(l)
        return (l - self.cfg.stem.pool_k) // self.cfg.stem.pool_stride + 1

    def forward(self, x: Tensor, mode: str) -> Tensor:
        if x.data.ndim != 3 or x.data.shape[1] != 1:
            raise ShapeError(f"stem input must be [N,1,L], got {x.data.shape}")
        if x.data.shape[2] != self.cfg.input_len:
            raise ShapeError(f"stem input length {x.data.shape[2]} != configured {self.cfg.input_len}")
        for bn, conv in self.layers:
            x = conv.forward(ops.activation(bn.forward(x, mode), self.activation))
        return ops.max_pool1d(x, self.cfg.stem.pool_k, self.cfg.stem.pool_stride)


class PSANet(Module):
    def __init__(self, cfg: PSAConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.config = cfg
        self.stem = self.add_child("stem", Stem(cfg, rng))
        widths = cfg.stage_widths
        branch = cfg.branch_widths
        cin = self.stem.out_channels
        self.stages = []
        for k in range(5):
            blocks = []
            for j in range(cfg.blocks_per_stage[k]):
                stride = 2 if j == 0 else 1
                block = PSABlock(cin, widths[k], cfg, branch[k], stride, rng)
                self.add_child(f"stage{k + 1}.block{j + 1}", block)
                blocks.append(block)
                cin = widths[k]
            self.stages.append(blocks)
        head = Module()
        self.add_child("head", head)
        self.head_bn = head.add_child("bn", BatchNorm1d(cin))
        self.fc1 = head.add_child("fc1", Linear(cin, cfg.head_hidden, rng))
        self.fc2 = head.add_child("fc2", Linear(cfg.head_hidden, 1, rng))

    def forward_scores(self, batch: Tensor, mode: str = "eval",
                       rng: np.random.Generator | None = None) -> Tensor:
        """Sigmoid scores in (0,1), one per clip; higher = more bonafide."""
        if not np.isfinite(batch.data.sum(dtype=np.float64)):
            raise NumericsError("non-finite values in the input batch")
        h = self.stem.forward(batch, mode)
        _check_finite(h, "stem")
        for k, blocks in enumerate(self.stages):
            for j, block in enumerate(blocks):
                h = block.forward(h, mode, rng)
                _check_finite(h, f"stage{k + 1}.block{j + 1}")
        h = ops.relu(self.head_bn.forward(h, mode))
        n = h.data.shape[0]
        pooled = ops.global_max_pool(h).reshape(n, h.data.shape[1])
        z = ops.relu(self.fc1.forward(pooled))
        scores = ops.sigmoid(self.fc2.forward(z).reshape(n))
        _check_finite(scores, "head")
        return scores


def _check_finite(t: Tensor, name: str) -> None:
    if not np.isfinite(t.data.sum(dtype=np.float64)):
        raise NumericsError(f"non-finite activations after {name}")


def build_model(cfg: PSAConfig, rng: np.random.Generator) -> PSANet:
    return PSANet(cfg, rng)


def stem_forward(model: PSANet, batch: Tensor, mode: str = "eval") -> Tensor:
    return model.stem.forward(batch, mode)


def se_gate(features: Tensor, gate: SEGate) -> Tensor:
    return gate.forward(features)


def block_forward(block: PSABlock, x: Tensor, mode: str = "eval",
                  rng: np.random.Generator | None = None) -> Tensor:
    return block.forward(x, mode, rng)


def forward_scores(model: PSANet, batch: Tensor, mode: str = "eval",
                   rng: np.random.Generator | None = None) -> Tensor:
    return model.forward_scores(batch, mode, rng)


def predict(scores: Tensor | np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Hard decisions from scores: 1 (bonafide) when score >= threshold."""
    data = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    return (data >= threshold).astype(np.int64)


def reduced_config(cfg: PSAConfig, width_div: float) -> PSAConfig:
    """The same architecture at 1/width_div of every width (stem and stages)."""
    return replace(cfg, width_scale=cfg.width_scale / width_div)

"""Edge-budget accounting: parameter counts, analytic FLOPs, measured
latency, and on-disk checkpoint size.

FLOP convention: one multiply-accumulate = 2 FLOPs. A conv costs
2*Cout*Lout*(Cin/groups)*K plus Cout*Lout for its bias; a linear costs
2*in*out + out; norms, activations, pools, gates, and residual adds count 1
FLOP per element. Some toolchains count conv/linear only, so that variant
sits behind include_elementwise=False. The convention in force is printed
in every report. Counts are per single clip and depend only on the model
configuration, never on the machine.
"""

import os
import sys
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from ._kernels import BACKEND
from .checkpoint import save_checkpoint
from .errors import ConfigError, DataError
from .model import PSANet
from .tensor import Tensor

MAC_CONVENTION = "1 MAC = 2 FLOPs, conv+linear (bias included) plus elementwise at 1 FLOP/element"
MAC_CONVENTION_BARE = "1 MAC = 2 FLOPs, conv+linear only (bias included), elementwise excluded"


@dataclass(frozen=True)
class CostReport:
    label: str
    params: int
    flops: int
    flops_convention: str
    checkpoint_bytes: int
    latency_mean_s: float = float("nan")
    latency_std_s: float = float("nan")
    latency_runs: int = 0
    env: str = ""


def count_params(model: PSANet) -> int:
    return int(sum(t.data.size for t in model.named_parameters().values()))


def _conv_flops(conv, lout: int) -> int:
    total = 2 * conv.cout * lout * (conv.cin // conv.groups) * conv.k
    if conv.bias is not None:
        total += conv.cout * lout
    return total


def _linear_flops(fc) -> int:
    return 2 * fc.fin * fc.fout + fc.fout


def count_flops(model: PSANet, input_len: int | None = None,
                include_elementwise: bool = True) -> int:
    """Analytic per-clip cost of an eval-mode forward pass."""
    cfg = model.config
    l = cfg.input_len if input_len is None else input_len
    if l < 1:
        raise ConfigError(f"input_len must be positive, got {l}")
    total = 0
    elem = 0
    for bn, conv in model.stem.layers:
        elem += 2 * conv.cin * l  # norm + activation
        lout = conv.out_len(l)
        total += _conv_flops(conv, lout)
        l = lout
    elem += model.stem.out_channels * l  # stem max pool compares
    l = (l - cfg.stem.pool_k) // cfg.stem.pool_stride + 1

    for blocks in model.stages:
        for block in blocks:
            lin = l
            lout = block.transform.out_len(lin)
            elem += 2 * block.cin * lin  # bn1 + relu
            total += _conv_flops(block.reduce, lin)
            elem += 2 * block.m * lin  # bn2 + relu
            total += _conv_flops(block.transform, lout)
            elem += 2 * block.m * lout  # bn3 + relu
            total += _conv_flops(block.expand, lout)
            if block.se is not None:
                elem += block.cout * lout  # squeeze average
                total += _linear_flops(block.se.fc1) + _linear_flops(block.se.fc2)
                elem += block.cout // model.config.se_reduction + block.cout  # gate activations
                elem += block.cout * lout  # channel scaling
            if block.proj is not None:
                total += _conv_flops(block.proj, lout)
            if block.use_skip:
                elem += block.cout * lout  # residual add
            l = lout

    elem += 2 * model.head_bn.c * l  # head bn + relu
    elem += model.head_bn.c * l  # global max pool compares
    total += _linear_flops(model.fc1) + _linear_flops(model.fc2)
    elem += model.fc1.fout + 1  # head relu + sigmoid
    if include_elementwise:
        total += elem
    return int(total)


def checkpoint_size(path: str) -> int:
    """Exact byte length of a serialized checkpoint file."""
    if not os.path.exists(path):
        raise DataError(f"no checkpoint at {path}")
    return os.path.getsize(path)


def model_checkpoint_size(model: PSANet) -> int:
    """Bytes the model occupies when serialized (no optimizer state)."""
    with tempfile.TemporaryDirectory() as d:
        probe = os.path.join(d, "size_probe.ckpt")
        save_checkpoint(model, probe)
        return checkpoint_size(probe)


def environment_label() -> str:
    return (f"python {sys.version.split()[0]}, numpy {np.__version__}, "
            f"kernels={BACKEND}, OMP_NUM_THREADS={os.environ.get('OMP_NUM_THREADS', 'unset')}")


def measure_latency(model: PSANet, n_clips: int = 25, warmup: int = 3,
                    rng: np.random.Generator | None = None) -> tuple:
    """Wall-clock seconds per single-clip eval forward: (mean, std, samples).

    Runs sequentially in one lane; absolute numbers are environment-bound
    and should always be paired with environment_label().
    """
    if n_clips < 2:
        raise ConfigError(f"latency needs at least 2 runs, got {n_clips}")
    rng = rng or np.random.default_rng(0)
    x = Tensor(rng.standard_normal((1, 1, model.config.input_len)).astype(np.float32))
    for _ in range(warmup):
        model.forward_scores(x, "eval")
    samples = np.empty(n_clips)
    for i in range(n_clips):
        t0 = time.perf_counter()
        model.forward_scores(x, "eval")
        samples[i] = time.perf_counter() - t0
    return float(samples.mean()), float(samples.std()), samples


def profile_model(model: PSANet, label: str = "", n_clips: int = 25,
                  include_latency: bool = True, include_elementwise: bool = True) -> CostReport:
    cfg = model.config
    label = label or f"{cfg.cardinality}x{cfg.bottleneck_width}"
    mean, std, n = float("nan"), float("nan"), 0
    if include_latency:
        mean, std, samples = measure_latency(model, n_clips=n_clips)
        n = samples.size
    return CostReport(
        label=label,
        params=count_params(model),
        flops=count_flops(model, include_elementwise=include_elementwise),
        flops_convention=MAC_CONVENTION if include_elementwise else MAC_CONVENTION_BARE,
        checkpoint_bytes=model_checkpoint_size(model),
        latency_mean_s=mean,
        latency_std_s=std,
        latency_runs=n,
        env=environment_label(),
    )


def format_report(report: CostReport) -> str:
    lines = [
        f"config {report.label}",
        f"params {report.params}",
        f"flops {report.flops}",
        f"checkpoint_bytes {report.checkpoint_bytes}",
    ]
    if report.latency_runs:
        lines.append(f"latency_mean_s {report.latency_mean_s:.6f}")
        lines.append(f"latency_std_s {report.latency_std_s:.6f}")
        lines.append(f"latency_runs {report.latency_runs}")
    lines.append(f"flops_convention {report.flops_convention}")
    lines.append(f"env {report.env}")
    return "\n".join(lines) + "\n"


def format_sweep_table(reports: list) -> str:
    """Sweep rows as a delimited table, one CostReport per line."""
    lines = ["config params flops checkpoint_bytes latency_mean_s latency_std_s latency_runs"]
    for r in reports:
        lat = (f"{r.latency_mean_s:.6f} {r.latency_std_s:.6f} {r.latency_runs}"
               if r.latency_runs else "- - 0")
        lines.append(f"{r.label} {r.params} {r.flops} {r.checkpoint_bytes} {lat}")
    if reports:
        lines.append(f"# flops_convention: {reports[0].flops_convention}")
        lines.append(f"# env: {reports[0].env}")
    return "\n".join(lines) + "\n"

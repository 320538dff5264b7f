"""The train/validate/select loop and split scoring.

Each optimizer step follows forward -> binary cross-entropy -> backward ->
Adam with the warmup/inverse-sqrt schedule. After every epoch the dev split
is scored (loss and EER, no augmentation); the returned checkpoint is the
one with the lowest dev loss seen, ties keeping the earliest epoch. With a
fixed seed and single-threaded math the whole loop is bit-reproducible:
all shuffling, augmentation, and dropout randomness is drawn from
generators seeded by (seed, epoch).
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import augment, data
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NumericsError
from .metrics import ScoreRecord, compute_eer, write_score_file
from .model import PSAConfig, PSANet, build_model
from .ops import bce_loss
from .optim import AdamState, adam_step, lr_at
from .tensor import backward, zero_grads


@dataclass
class TrainRunConfig:
    model: PSAConfig = field(default_factory=PSAConfig)
    epochs: int = 50
    batch_size: int = 16
    peak_lr: float = 1e-4
    weight_decay: float = 0.001
    warmup_steps: int = 1000
    seed: int = 0
    unified_mode: bool = True
    attack_filter: str = ""
    augment_specs: list = field(default_factory=augment.default_specs)
    out_dir: str = "runs"

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.warmup_steps < 1:
            raise ConfigError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        augment.validate_pipeline(self.augment_specs)
        self.model.validate()


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_eer: float
    lr: float


@dataclass
class TrainResult:
    best_path: str
    best_epoch: int
    best_dev_loss: float
    history: list


HISTORY_HEADER = "epoch train_loss dev_loss dev_eer lr"


def format_history(history: list) -> str:
    lines = [HISTORY_HEADER]
    for h in history:
        lines.append(f"{h.epoch} {h.train_loss:.6f} {h.dev_loss:.6f} {h.dev_eer:.6f} {h.lr:.8g}")
    return "\n".join(lines) + "\n"


def _score_split(model: PSANet, manifest: data.DatasetManifest, split: str,
                 cfg: TrainRunConfig, cache: dict) -> tuple:
    """Augmentation-free eval pass; returns (mean loss, records in split order)."""
    stream = data.batch_iter(manifest, split, cfg, np.random.default_rng(0), cache,
                             training=False)
    total, count = 0.0, 0
    scores = []
    for x, y in stream:
        out = model.forward_scores(x, "eval")
        loss = bce_loss(out, y)
        total += float(loss.data) * y.data.size
        count += y.data.size
        scores.append(out.data.copy())
    flat = np.concatenate(scores)
    records = [ScoreRecord(e.utterance_id, float(s), e.key)
               for e, s in zip(stream.entries, flat)]
    return total / count, records


def train(run_config: TrainRunConfig, manifest: data.DatasetManifest) -> tuple:
    """Run the loop; returns (TrainResult, history).

    The best checkpoint lands at <out_dir>/best.ckpt and the per-epoch table
    at <out_dir>/history.txt.
    """
    run_config.validate()
    for split in ("train", "dev"):
        if split not in manifest.entries:
            raise DataError(f"training needs a {split!r} split, manifest has {manifest.splits()}")
    os.makedirs(run_config.out_dir, exist_ok=True)
    best_path = os.path.join(run_config.out_dir, "best.ckpt")

    model = build_model(run_config.model, np.random.default_rng([run_config.seed, 0]))
    params = model.parameters()
    opt = AdamState(lr=0.0, weight_decay=run_config.weight_decay)
    cache: dict = {}
    history = []
    best_loss, best_epoch = np.inf, 0
    step = 0

    for epoch in range(1, run_config.epochs + 1):
        rng = np.random.default_rng([run_config.seed, epoch])
        stream = data.batch_iter(manifest, "train", run_config, rng, cache)
        total, count = 0.0, 0
        for b, (x, y) in enumerate(stream, start=1):
            scores = model.forward_scores(x, "train", rng)
            loss = bce_loss(scores, y)
            lval = float(loss.data)
            step += 1
            opt.lr = lr_at(step, run_config.peak_lr, run_config.warmup_steps)
            if not np.isfinite(lval):
                raise NumericsError(
                    f"non-finite training loss at epoch {epoch}, batch {b}, lr {opt.lr:.3g}")
            backward(loss)
            adam_step(params, None, opt)
            zero_grads(params)
            total += lval * y.data.size
            count += y.data.size

        dev_loss, dev_records = _score_split(model, manifest, "dev", run_config, cache)
        dev_eer, _ = compute_eer(dev_records)
        history.append(EpochStats(epoch, total / count, dev_loss, dev_eer, opt.lr))
        if dev_loss < best_loss:
            best_loss, best_epoch = dev_loss, epoch
            save_checkpoint(model, best_path, epoch=epoch, dev_loss=dev_loss)

    with open(os.path.join(run_config.out_dir, "history.txt"), "w", encoding="utf-8") as f:
        f.write(format_history(history))
    return TrainResult(best_path, best_epoch, best_loss, history), history


def evaluate(model_or_path, manifest: data.DatasetManifest, split: str,
             out_path: str | None = None, batch_size: int = 16) -> list:
    """Score every utterance of a split in protocol order with an eval-mode
    forward pass; optionally writes the "utt score" file."""
    if isinstance(model_or_path, (str, os.PathLike)):
        model, _ = load_checkpoint(str(model_or_path))
    else:
        model = model_or_path
    cfg = TrainRunConfig(model=model.config, batch_size=batch_size, augment_specs=[])
    _, records = _score_split(model, manifest, split, cfg, {})
    if out_path is not None:
        write_score_file(records, out_path)
    return records

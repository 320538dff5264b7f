"""Waveform augmentation for training batches.

Five corruption kinds, applied at most one per clip: a single uniform draw
falls into cumulative probability buckets, so the per-kind probabilities
must sum to at most 1 and the leftover mass means "leave the clip alone".
Trim changes the clip length (callers re-pad afterwards); every other kind
preserves both length and sample rate.
"""

from dataclasses import dataclass

import numpy as np

from . import audio
from .errors import ConfigError

AUGMENT_KINDS = ("highpass", "lowpass", "reverb", "trim_silence", "codec_proxy")


@dataclass(frozen=True)
class AugmentSpec:
    kind: str
    probability: float = 0.1
    cutoff_hz: float = 0.0  # 0 picks the per-kind default at apply time
    decay_s: float = 0.3
    threshold_db: float = -40.0
    frame_ms: float = 25.0
    bit_depth: int = 8
    downrate_factor: int = 2

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise ConfigError(f"unknown augmentation {self.kind!r}, expected one of {AUGMENT_KINDS}")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError(f"augmentation probability must be in [0,1], got {self.probability}")


_DEFAULT_CUTOFF = {"highpass": 300.0, "lowpass": 3400.0}


def default_specs(probability: float = 0.1) -> list:
    return [AugmentSpec(kind, probability) for kind in AUGMENT_KINDS]


def validate_pipeline(specs: list) -> None:
    total = sum(s.probability for s in specs)
    if total > 1.0 + 1e-9:
        raise ConfigError(f"augmentation probabilities sum to {total:.4f} > 1")


def apply_augment(clip: audio.AudioClip, spec: AugmentSpec,
                  rng: np.random.Generator) -> audio.AudioClip:
    """Apply one named corruption. Only reverb consumes randomness."""
    if spec.kind in ("highpass", "lowpass"):
        cutoff = spec.cutoff_hz or _DEFAULT_CUTOFF[spec.kind]
        return audio.biquad_filter(clip, spec.kind, cutoff)
    if spec.kind == "reverb":
        return audio.reverberate(clip, decay_s=spec.decay_s, rng=rng)
    if spec.kind == "trim_silence":
        return audio.trim_silence(clip, spec.threshold_db, spec.frame_ms)
    if spec.kind == "codec_proxy":
        # The quantizer's full scale is [-1,1]; z-scored input peaks above 1,
        # so scale into range and back rather than hard-clipping.
        peak = float(np.max(np.abs(clip.samples))) if len(clip) else 0.0
        if peak <= 1.0:
            return audio.codec_proxy(clip, spec.bit_depth, spec.downrate_factor)
        scaled = audio.AudioClip(clip.samples / np.float32(peak), clip.sample_rate)
        out = audio.codec_proxy(scaled, spec.bit_depth, spec.downrate_factor)
        return audio.AudioClip(out.samples * np.float32(peak), clip.sample_rate)
    raise ConfigError(f"unknown augmentation {spec.kind!r}")


def augment_clip(clip: audio.AudioClip, specs: list,
                 rng: np.random.Generator) -> tuple:
    """Maybe corrupt one clip; returns (clip, kind or None).

    One uniform draw; the first spec whose cumulative bucket contains it is
    applied. Identical rng state gives an identical outcome.
    """
    validate_pipeline(specs)
    u = rng.random()
    edge = 0.0
    for spec in specs:
        edge += spec.probability
        if u < edge:
            return apply_augment(clip, spec, rng), spec.kind
    return clip, None

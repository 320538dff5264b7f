"""Corpus plumbing: protocol files, manifests, a synthetic desk-scale corpus,
and batch construction.

Directory layout for a corpus rooted at R:

    R/protocols/{split}.txt        five-field protocol lines
    R/audio/{split}/{utt}.wav      one clip per utterance
    R/features/{split}/{utt}.npy   (feature adapter mode only)

Batch preprocessing order is fixed: resample -> fix_length -> zscore ->
augment, with augmentation on the train split only. Class balance comes from
oversampling the minority class and weaving the two classes alternately, so
every batch of size >= 2 has a label mean in [0.25, 0.75] by construction.
"""

import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import audio, augment
from .errors import DataError, WavError
from .tensor import Tensor

VALID_KEYS = ("bonafide", "spoof")


@dataclass(frozen=True)
class ProtocolEntry:
    speaker_id: str
    utterance_id: str
    env_id: str
    system_id: str
    key: str


def parse_protocol(path: str) -> list:
    """Read five-field protocol lines: speaker utt env system key.

    env and system use '-' for "not applicable"; key is bonafide or spoof.
    Blank lines are skipped; anything else malformed names its line number.
    """
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            spk, utt, env, system, key = parts
            if key not in VALID_KEYS:
                raise DataError(f"{path}:{lineno}: unknown key {key!r} (want bonafide|spoof)")
            entries.append(ProtocolEntry(spk, utt, env, system, key))
    if not entries:
        raise DataError(f"{path}: protocol file has no entries")
    return entries


@dataclass
class DatasetManifest:
    root: str
    sample_rate: int
    entries: dict = field(default_factory=dict)  # split -> list of ProtocolEntry
    feature_mode: bool = False

    def splits(self) -> list:
        return list(self.entries)

    def audio_path(self, split: str, utt: str) -> str:
        if self.feature_mode:
            return os.path.join(self.root, "features", split, utt + ".npy")
        return os.path.join(self.root, "audio", split, utt + ".wav")

    def class_counts(self, split: str) -> dict:
        counts = {k: 0 for k in VALID_KEYS}
        for e in self.entries[split]:
            counts[e.key] += 1
        return counts


def load_manifest(root: str, sample_rate: int = 16000,
                  splits: tuple = ("train", "dev", "eval"),
                  feature_mode: bool = False) -> DatasetManifest:
    """Build a manifest from whichever of the named splits have protocol
    files under root, checking every referenced audio file exists."""
    manifest = DatasetManifest(root=root, sample_rate=sample_rate, feature_mode=feature_mode)
    for split in splits:
        proto = os.path.join(root, "protocols", split + ".txt")
        if not os.path.exists(proto):
            continue
        entries = parse_protocol(proto)
        seen = set()
        for e in entries:
            if e.utterance_id in seen:
                raise DataError(f"{proto}: duplicate utterance {e.utterance_id!r}")
            seen.add(e.utterance_id)
            p = manifest.audio_path(split, e.utterance_id)
            if not os.path.exists(p):
                raise DataError(f"utterance {e.utterance_id!r}: missing file {p}")
        manifest.entries[split] = entries
    if not manifest.entries:
        raise DataError(f"{root}: no protocol files found for splits {splits}")
    return manifest


def _pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    k = np.arange(spec.size, dtype=np.float64)
    k[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(k), n)
    return x / max(np.sqrt(np.mean(x * x)), 1e-12)


def _synth_voiced(n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """A crude voiced-speech stand-in: a harmonic stack (f0 in 100-300 Hz,
    slowly decaying amplitudes with per-harmonic jitter, random phases) over
    a bed of pink noise.  The slow decay keeps real energy in the top octave,
    which is the band the spoof construction destroys."""
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(100.0, 300.0)
    top = min(7800.0, sample_rate / 2 - 200.0)
    x = np.zeros(n)
    for h in range(1, int(top / f0) + 1):
        amp = h ** -0.1 * rng.uniform(0.6, 1.0)
        x += amp * np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi))
    x /= max(np.max(np.abs(x)), 1e-12)
    # keep the bed quiet so the harmonic stack, not the noise floor, carries
    # the top-octave energy the spoof construction removes
    x = x + 0.05 * _pink_noise(n, rng)
    peak = rng.uniform(0.5, 0.8)
    return (x / max(np.max(np.abs(x)), 1e-12) * peak).astype(np.float32)


def synth_clip(seed: int, sample_rate: int = 16000, duration_s: float = 4.0) -> audio.AudioClip:
    """One synthetic bonafide-style clip (for previews and fixtures)."""
    rng = np.random.default_rng([seed, zlib.crc32(b"clip")])
    n = int(round(duration_s * sample_rate))
    return audio.AudioClip(_synth_voiced(n, sample_rate, rng), sample_rate)


def synth_dataset(n_per_class: int, seed: int, out_dir: str, split: str = "train",
                  sample_rate: int = 16000, duration_s: float = 4.0) -> DatasetManifest:
    """Generate one split of a synthetic corpus: n bonafide + n spoof clips.

    Spoof clips are the bonafide construction squeezed through a 3.4 kHz
    lowpass and a 6-bit half-rate codec stand-in, so the classes separate on
    band limitation plus a flat quantization floor rather than on content.
    Deterministic in (seed, split).
    """
    if n_per_class < 1:
        raise DataError(f"n_per_class must be >= 1, got {n_per_class}")
    n = int(round(duration_s * sample_rate))
    wav_dir = os.path.join(out_dir, "audio", split)
    proto_dir = os.path.join(out_dir, "protocols")
    os.makedirs(wav_dir, exist_ok=True)
    os.makedirs(proto_dir, exist_ok=True)
    split_tag = zlib.crc32(split.encode())
    lines = []
    for cls, key in enumerate(VALID_KEYS):
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, split_tag, cls, i])
            x = _synth_voiced(n, sample_rate, rng)
            clip = audio.AudioClip(x, sample_rate)
            if key == "spoof":
                clip = audio.biquad_filter(clip, "lowpass", 3400.0)
                clip = audio.codec_proxy(clip, bit_depth=6, downrate_factor=2)
            utt = f"{split}_{key[0]}{i:04d}"
            audio.save_wav(clip, os.path.join(wav_dir, utt + ".wav"), fmt="pcm16")
            system = "-" if key == "bonafide" else f"S{1 + i % 2}"
            lines.append(f"SPK{i % 4:02d} {utt} - {system} {key}\n")
    with open(os.path.join(proto_dir, split + ".txt"), "w", encoding="utf-8") as f:
        f.writelines(lines)
    return load_manifest(out_dir, sample_rate=sample_rate, splits=(split,))


def _load_vector(manifest: DatasetManifest, split: str, e: ProtocolEntry,
                 target_len: int) -> np.ndarray:
    """One utterance -> preprocessed float32 vector of target_len."""
    path = manifest.audio_path(split, e.utterance_id)
    if manifest.feature_mode:
        try:
            feats = np.load(path)
        except (OSError, ValueError) as err:
            raise DataError(f"utterance {e.utterance_id!r}: unreadable features ({err})") from err
        if feats.ndim == 2:
            feats = feats.mean(axis=0)  # time x coeff map -> per-coefficient means
        if feats.ndim != 1:
            raise DataError(f"utterance {e.utterance_id!r}: features must be 1-D or 2-D")
        clip = audio.AudioClip(feats.astype(np.float32), manifest.sample_rate)
    else:
        try:
            clip = audio.load_wav(path)
        except (OSError, WavError) as err:
            raise DataError(f"utterance {e.utterance_id!r}: {err}") from err
        clip = audio.resample(clip, manifest.sample_rate)
    clip = audio.fix_length(clip, target_len)
    clip = audio.zscore_normalize(clip)
    return clip.samples


def _entry_label(e: ProtocolEntry) -> float:
    return 1.0 if e.key == "bonafide" else 0.0


def select_entries(manifest: DatasetManifest, split: str, unified_mode: bool = True,
                   attack_filter: str = "") -> list:
    """The split's entries under the labeling policy: unified mode keeps all
    spoof systems pooled; per-attack mode keeps bonafide plus one system."""
    if split not in manifest.entries:
        raise DataError(f"manifest has no split {split!r} (has {manifest.splits()})")
    entries = manifest.entries[split]
    if not unified_mode:
        if not attack_filter:
            raise DataError("per-attack mode needs an attack_filter system id")
        entries = [e for e in entries if e.key == "bonafide" or e.system_id == attack_filter]
        if not any(e.key == "spoof" for e in entries):
            raise DataError(f"no spoof entries with system {attack_filter!r} in split {split!r}")
    if not entries:
        raise DataError(f"split {split!r} is empty")
    return entries


class BatchStream:
    """One epoch of batches; iterate to get (clips [N,1,L], labels [N]).

    The applied preprocessing stages are recorded in .pipeline so callers
    can assert the order instead of trusting it.
    """

    def __init__(self, manifest: DatasetManifest, split: str, run_config,
                 rng: np.random.Generator, cache: dict | None = None,
                 training: bool | None = None):
        self.manifest, self.split, self.cfg, self.rng = manifest, split, run_config, rng
        self.cache = cache if cache is not None else {}
        # training drives shuffling/oversampling/augmentation; scoring a
        # train split for metrics must pass training=False to keep protocol
        # order and a clean pipeline
        self.training = (split == "train") if training is None else training
        self.entries = select_entries(manifest, split, run_config.unified_mode,
                                      run_config.attack_filter)
        stages = ["resample", "fix_length", "zscore"]
        if manifest.feature_mode:
            stages = ["fix_length", "zscore"]
        if self.training and run_config.augment_specs:
            stages.append("augment")
        self.pipeline = tuple(stages)
        self.target_len = run_config.model.input_len

    def _vector(self, e: ProtocolEntry) -> np.ndarray:
        key = (self.split, e.utterance_id)
        if key not in self.cache:
            self.cache[key] = _load_vector(self.manifest, self.split, e, self.target_len)
        return self.cache[key]

    def _epoch_order(self) -> list:
        if not self.training:
            return list(range(len(self.entries)))
        ones = [i for i, e in enumerate(self.entries) if e.key == "bonafide"]
        zeros = [i for i, e in enumerate(self.entries) if e.key != "bonafide"]
        if not ones or not zeros:
            raise DataError(f"train split needs both classes (got {len(ones)} bonafide, {len(zeros)} spoof)")
        if len(ones) < len(zeros):  # oversample the minority up to the majority count
            reps = -(-len(zeros) // len(ones))
            ones = (ones * reps)[:len(zeros)]
        elif len(zeros) < len(ones):
            reps = -(-len(ones) // len(zeros))
            zeros = (zeros * reps)[:len(ones)]
        ones = [ones[j] for j in self.rng.permutation(len(ones))]
        zeros = [zeros[j] for j in self.rng.permutation(len(zeros))]
        woven = []
        for a, b in zip(ones, zeros):
            woven.extend((a, b))
        return woven

    def __iter__(self):
        order = self._epoch_order()
        bs = self.cfg.batch_size
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            rows = []
            labels = np.empty(len(idx), np.float32)
            for j, i in enumerate(idx):
                e = self.entries[i]
                x = self._vector(e)
                if self.training and self.cfg.augment_specs and not self.manifest.feature_mode:
                    clip = audio.AudioClip(x, self.manifest.sample_rate)
                    clip, kind = augment.augment_clip(clip, self.cfg.augment_specs, self.rng)
                    if kind is not None:
                        clip = audio.fix_length(clip, self.target_len)
                        x = clip.samples
                rows.append(x)
                labels[j] = _entry_label(e)
            batch = np.stack(rows)[:, None, :]
            yield Tensor(batch), Tensor(labels)


def batch_iter(manifest: DatasetManifest, split: str, run_config,
               rng: np.random.Generator, cache: dict | None = None,
               training: bool | None = None) -> BatchStream:
    return BatchStream(manifest, split, run_config, rng, cache, training)

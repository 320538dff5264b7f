"""Waveform loading and the preprocessing / corruption primitives.

All functions take and return :class:`AudioClip`, a float32 mono waveform
tagged with its sample rate. Loading supports the two WAV flavors we emit
(16-bit PCM and 32-bit IEEE float); stereo is downmixed by averaging.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, lfilter, resample_poly

from .errors import (ConfigError, DataError, EmptyAudioError, TruncatedWavError,
                     UnsupportedCodecError)

_PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.float32)
        if s.ndim != 1:
            raise DataError(f"clip samples must be 1-D, got shape {s.shape}")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if s.size and not np.isfinite(s.sum(dtype=np.float64)):
            raise DataError("clip contains non-finite samples")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path: str) -> AudioClip:
    """Parse a RIFF/WAVE file into a mono float32 clip.

    PCM16 samples are scaled by 1/32768 (so -32768 maps to -1.0); float32
    samples pass through untouched, which makes a save/load round trip of a
    float32 mono clip bit-identical. Stereo downmixes to the channel mean.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise TruncatedWavError(f"{path}: file too short for a RIFF header")
    if raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise UnsupportedCodecError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        pos += 8
        if pos + size > len(raw):
            raise TruncatedWavError(f"{path}: chunk {cid!r} declares {size} bytes beyond end of file")
        if cid == b"fmt ":
            if size < 16:
                raise TruncatedWavError(f"{path}: fmt chunk is only {size} bytes")
            fmt = struct.unpack_from("<HHIIHH", raw, pos)
        elif cid == b"data" and data is None:
            data = raw[pos:pos + size]
        pos += size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise TruncatedWavError(f"{path}: missing fmt chunk")
    if data is None:
        raise TruncatedWavError(f"{path}: missing data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedCodecError(f"{path}: {channels} channels unsupported (want mono or stereo)")
    if rate <= 0:
        raise UnsupportedCodecError(f"{path}: invalid sample rate {rate}")
    if audio_format == 1 and bits == 16:
        dtype, width = "<i2", 2
    elif audio_format == 3 and bits == 32:
        dtype, width = "<f4", 4
    else:
        raise UnsupportedCodecError(
            f"{path}: format tag {audio_format} at {bits} bits unsupported (PCM16 or IEEE float32 only)")
    if len(data) == 0:
        raise EmptyAudioError(f"{path}: zero-length data chunk")
    frame = width * channels
    if len(data) % frame != 0:
        raise TruncatedWavError(f"{path}: data chunk ends mid-frame ({len(data)} bytes, frame {frame})")

    x = np.frombuffer(data, dtype=dtype)
    if audio_format == 1:
        x = x.astype(np.float32) / np.float32(_PCM16_SCALE)
    else:
        x = x.astype(np.float32)
    if channels == 2:
        x = x.reshape(-1, 2).mean(axis=1, dtype=np.float32)
    return AudioClip(x, int(rate))


def save_wav(clip: AudioClip, path: str, fmt: str = "float32") -> None:
    """Write a mono WAV; fmt is "float32" (IEEE) or "pcm16"."""
    if fmt == "float32":
        payload = clip.samples.astype("<f4").tobytes()
        audio_format, bits = 3, 32
    elif fmt == "pcm16":
        q = np.clip(np.rint(clip.samples.astype(np.float64) * _PCM16_SCALE), -32768, 32767)
        payload = q.astype("<i2").tobytes()
        audio_format, bits = 1, 16
    else:
        raise ConfigError(f"wav format must be float32 or pcm16, not {fmt!r}")
    width = bits // 8
    chunks = [struct.pack("<4sI HHIIHH", b"fmt ", 16, audio_format, 1,
                          clip.sample_rate, clip.sample_rate * width, width, bits)]
    if audio_format == 3:
        chunks.append(struct.pack("<4sII", b"fact", 4, clip.samples.size))
    chunks.append(struct.pack("<4sI", b"data", len(payload)) + payload)
    if len(payload) & 1:
        chunks[-1] += b"\x00"
    body = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI4s", b"RIFF", 4 + len(body), b"WAVE"))
        f.write(body)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase resample (Kaiser window, beta=8.6) to target_rate.

    Output length is round(len * target / source) exactly, trimming or
    zero-padding the filter's edge transients as needed. A same-rate call
    returns the clip unchanged.
    """
    if target_rate <= 0:
        raise ConfigError(f"target rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    g = np.gcd(clip.sample_rate, target_rate)
    up, down = target_rate // g, clip.sample_rate // g
    y = resample_poly(clip.samples.astype(np.float64), up, down, window=("kaiser", 8.6))
    want = int(round(len(clip) * target_rate / clip.sample_rate))
    if len(y) > want:
        y = y[:want]
    elif len(y) < want:
        y = np.concatenate([y, np.zeros(want - len(y))])
    return AudioClip(y.astype(np.float32), target_rate)


def fix_length(clip: AudioClip, target_len: int = 64000) -> AudioClip:
    """Truncate to target_len, or zero-pad at the tail; idempotent."""
    if target_len < 1:
        raise ConfigError(f"target length must be >= 1, got {target_len}")
    if len(clip) == 0:
        raise DataError("cannot fix the length of an empty clip")
    x = clip.samples
    if x.size > target_len:
        x = x[:target_len]
    elif x.size < target_len:
        x = np.concatenate([x, np.zeros(target_len - x.size, np.float32)])
    else:
        return clip
    return AudioClip(x, clip.sample_rate)


def zscore_normalize(clip: AudioClip) -> AudioClip:
    """Center to zero mean, scale to unit population std; near-silent clips
    (std < 1e-8) come back as all zeros rather than amplified noise."""
    x = clip.samples.astype(np.float64)
    mu = x.mean()
    sigma = np.sqrt(np.mean((x - mu) ** 2))
    if sigma < 1e-8:
        return AudioClip(np.zeros_like(clip.samples), clip.sample_rate)
    return AudioClip(((x - mu) / sigma).astype(np.float32), clip.sample_rate)


def _biquad_coeffs(kind: str, cutoff_hz: float, sample_rate: int, q: float):
    w0 = 2.0 * np.pi * cutoff_hz / sample_rate
    cw, sw = np.cos(w0), np.sin(w0)
    alpha = sw / (2.0 * q)
    if kind == "lowpass":
        b = np.array([(1 - cw) / 2, 1 - cw, (1 - cw) / 2])
    elif kind == "highpass":
        b = np.array([(1 + cw) / 2, -(1 + cw), (1 + cw) / 2])
    else:
        raise ConfigError(f"biquad kind must be lowpass or highpass, not {kind!r}")
    a = np.array([1 + alpha, -2 * cw, 1 - alpha])
    return b / a[0], a / a[0]


def biquad_filter(clip: AudioClip, kind: str, cutoff_hz: float, q: float = 0.707) -> AudioClip:
    """Second-order Butterworth-style low/high pass (audio-EQ cookbook form),
    run once forward with zero initial state."""
    if not 0.0 < cutoff_hz < clip.sample_rate / 2:
        raise ConfigError(
            f"cutoff {cutoff_hz} Hz outside (0, {clip.sample_rate / 2}) for rate {clip.sample_rate}")
    if q <= 0:
        raise ConfigError(f"q must be positive, got {q}")
    b, a = _biquad_coeffs(kind, cutoff_hz, clip.sample_rate, q)
    y = lfilter(b, a, clip.samples.astype(np.float64))
    return AudioClip(y.astype(np.float32), clip.sample_rate)


def synth_rir(sample_rate: int, decay_s: float, rng: np.random.Generator) -> AudioClip:
    """A toy room response: unit impulse plus exponentially decaying noise."""
    if decay_s <= 0:
        raise ConfigError(f"decay must be positive, got {decay_s}")
    n = int(round(3 * decay_s * sample_rate)) + 1
    t = np.arange(n) / sample_rate
    tail = 0.3 * rng.standard_normal(n) * np.exp(-t / decay_s)
    tail[0] = 1.0
    return AudioClip(tail.astype(np.float32), sample_rate)


def reverberate(clip: AudioClip, rir: AudioClip | None = None, decay_s: float = 0.3,
                rng: np.random.Generator | None = None) -> AudioClip:
    """Convolve with a room impulse response, truncated back to the input
    length and rescaled so the output peak matches the input peak.

    With no rir given, a synthetic one is drawn from rng (required then).
    """
    if rir is None:
        if rng is None:
            raise ConfigError("reverberate needs an rng when synthesizing the impulse response")
        rir = synth_rir(clip.sample_rate, decay_s, rng)
    if rir.sample_rate != clip.sample_rate:
        raise DataError(f"rir rate {rir.sample_rate} != clip rate {clip.sample_rate}")
    if len(rir) == 0:
        raise DataError("empty impulse response")
    y = fftconvolve(clip.samples.astype(np.float64), rir.samples.astype(np.float64))[:len(clip)]
    peak_in = np.max(np.abs(clip.samples)) if len(clip) else 0.0
    peak_out = np.max(np.abs(y)) if y.size else 0.0
    if peak_in > 0 and peak_out > 0:
        y = y * (peak_in / peak_out)
    return AudioClip(y.astype(np.float32), clip.sample_rate)


def trim_silence(clip: AudioClip, threshold_db: float = -40.0, frame_ms: float = 25.0) -> AudioClip:
    """Drop leading/trailing frames whose RMS sits more than threshold_db
    below the loudest frame. An all-silent clip keeps one centered frame."""
    if frame_ms <= 0:
        raise ConfigError(f"frame_ms must be positive, got {frame_ms}")
    if len(clip) == 0:
        raise DataError("cannot trim an empty clip")
    flen = max(1, int(round(clip.sample_rate * frame_ms / 1000.0)))
    n_frames = (len(clip) + flen - 1) // flen
    rms = np.empty(n_frames)
    for i in range(n_frames):
        seg = clip.samples[i * flen:(i + 1) * flen].astype(np.float64)
        rms[i] = np.sqrt(np.mean(seg * seg))
    peak = rms.max()
    if peak <= 0.0:
        start = max(0, (len(clip) - flen) // 2)
        return AudioClip(clip.samples[start:start + flen], clip.sample_rate)
    keep = np.flatnonzero(rms >= peak * 10.0 ** (threshold_db / 20.0))
    lo = keep[0] * flen
    hi = min((keep[-1] + 1) * flen, len(clip))
    return AudioClip(clip.samples[lo:hi], clip.sample_rate)


def codec_proxy(clip: AudioClip, bit_depth: int = 8, downrate_factor: int = 2) -> AudioClip:
    """Cheap lossy-channel stand-in: resample down and back up by an integer
    factor, then requantize to a uniform bit_depth grid. Length and rate are
    preserved; bit_depth 16 with factor 1 is transparent to within one
    quantization step (2/65536)."""
    if not 4 <= bit_depth <= 16:
        raise ConfigError(f"bit_depth must be in [4, 16], got {bit_depth}")
    if downrate_factor < 1:
        raise ConfigError(f"downrate_factor must be >= 1, got {downrate_factor}")
    x = clip.samples.astype(np.float64)
    if downrate_factor > 1:
        y = resample_poly(x, 1, downrate_factor, window=("kaiser", 8.6))
        y = resample_poly(y, downrate_factor, 1, window=("kaiser", 8.6))
        if y.size > x.size:
            y = y[:x.size]
        elif y.size < x.size:
            y = np.concatenate([y, np.zeros(x.size - y.size)])
    else:
        y = x
    full = 2.0 ** (bit_depth - 1)
    q = np.clip(np.rint(y * full), -full, full - 1) / full
    return AudioClip(q.astype(np.float32), clip.sample_rate)

"""Protocol parsing, synthetic corpus generation, and batch assembly."""

import os

import numpy as np
import pytest

from psanet import audio, data
from psanet.augment import AugmentSpec
from psanet.data import (
    BatchStream,
    batch_iter,
    load_manifest,
    parse_protocol,
    select_entries,
    synth_clip,
    synth_dataset,
)
from psanet.errors import DataError
from psanet.train import TrainRunConfig


def run_cfg(**kw) -> TrainRunConfig:
    from psanet.model import PSAConfig

    base = dict(model=PSAConfig(input_len=64000), batch_size=8, augment_specs=[])
    base.update(kw)
    return TrainRunConfig(**base)


# ------------------------------------------------------------------ protocols

def test_parse_protocol_five_fields(tmp_path):
    p = tmp_path / "train.txt"
    p.write_text("LA_0001 LA_T_100 - A01 spoof\n"
                 "LA_0001 LA_T_101 - - bonafide\n")
    entries = parse_protocol(str(p))
    assert entries[0].key == "spoof" and entries[0].system_id == "A01"
    assert entries[1].key == "bonafide" and entries[1].system_id == "-"
    assert [e.utterance_id for e in entries] == ["LA_T_100", "LA_T_101"]


def test_parse_protocol_skips_blank_lines(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("\nA u1 - - bonafide\n\n\nB u2 - S1 spoof\n")
    assert len(parse_protocol(str(p))) == 2


def test_parse_protocol_rejects_short_line_with_number(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("A u1 - - bonafide\nA u2 - spoof\n")
    with pytest.raises(DataError, match=":2:"):
        parse_protocol(str(p))


def test_parse_protocol_rejects_unknown_key(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("A u1 - - genuine\n")
    with pytest.raises(DataError, match="genuine"):
        parse_protocol(str(p))


def test_parse_protocol_rejects_empty_file(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("\n  \n")
    with pytest.raises(DataError, match="no entries"):
        parse_protocol(str(p))


# ------------------------------------------------------------------- manifest

def test_manifest_counts_and_paths(tiny_corpus):
    man = tiny_corpus
    assert sorted(man.splits()) == ["dev", "eval", "train"]
    assert man.class_counts("train") == {"bonafide": 6, "spoof": 6}
    path = man.audio_path("dev", "dev_b0000")
    assert path.endswith(os.path.join("audio", "dev", "dev_b0000.wav"))
    assert os.path.exists(path)


def test_manifest_rejects_missing_audio(tmp_path):
    proto = tmp_path / "protocols"
    proto.mkdir()
    (proto / "train.txt").write_text("A u1 - - bonafide\n")
    with pytest.raises(DataError, match="u1"):
        load_manifest(str(tmp_path))


def test_manifest_rejects_duplicate_utterance(tmp_path, rng):
    proto = tmp_path / "protocols"
    proto.mkdir()
    (proto / "train.txt").write_text("A u1 - - bonafide\nB u1 - S1 spoof\n")
    wav = tmp_path / "audio" / "train"
    wav.mkdir(parents=True)
    clip = audio.AudioClip(rng.normal(size=160).astype(np.float32) * 0.1, 16000)
    audio.save_wav(clip, str(wav / "u1.wav"), fmt="pcm16")
    with pytest.raises(DataError, match="duplicate"):
        load_manifest(str(tmp_path))


def test_manifest_requires_at_least_one_split(tmp_path):
    with pytest.raises(DataError, match="no protocol files"):
        load_manifest(str(tmp_path))


# ------------------------------------------------------------------ synthesis

def test_synth_dataset_counts_and_balance(tiny_corpus):
    wavs = os.listdir(os.path.join(tiny_corpus.root, "audio", "train"))
    assert len(wavs) == 12
    assert tiny_corpus.class_counts("train") == {"bonafide": 6, "spoof": 6}


def test_synth_dataset_is_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    synth_dataset(2, seed=9, out_dir=str(a), split="train")
    synth_dataset(2, seed=9, out_dir=str(b), split="train")
    for name in sorted(os.listdir(a / "audio" / "train")):
        xa = (a / "audio" / "train" / name).read_bytes()
        xb = (b / "audio" / "train" / name).read_bytes()
        assert xa == xb, name
    assert (a / "protocols" / "train.txt").read_text() == \
           (b / "protocols" / "train.txt").read_text()


def test_synth_dataset_different_seeds_differ(tmp_path):
    a = synth_dataset(1, seed=1, out_dir=str(tmp_path / "a"))
    b = synth_dataset(1, seed=2, out_dir=str(tmp_path / "b"))
    xa = audio.load_wav(a.audio_path("train", "train_b0000")).samples
    xb = audio.load_wav(b.audio_path("train", "train_b0000")).samples
    assert not np.array_equal(xa, xb)


def test_synth_dataset_rejects_bad_count(tmp_path):
    with pytest.raises(DataError, match="n_per_class"):
        synth_dataset(0, seed=0, out_dir=str(tmp_path))


def band_energy(x: np.ndarray, sr: int, lo: float) -> float:
    spec = np.abs(np.fft.rfft(x.astype(np.float64))) ** 2
    freqs = np.fft.rfftfreq(len(x), 1 / sr)
    return float(spec[freqs >= lo].sum())


def test_spoof_class_loses_the_top_band(tiny_corpus):
    """Mean energy above 5 kHz: spoof < 10% of bonafide."""
    man = tiny_corpus
    by_key = {"bonafide": [], "spoof": []}
    for e in man.entries["train"]:
        clip = audio.load_wav(man.audio_path("train", e.utterance_id))
        by_key[e.key].append(band_energy(clip.samples, clip.sample_rate, 5000.0))
    assert np.mean(by_key["spoof"]) < 0.1 * np.mean(by_key["bonafide"])


def test_synth_clip_is_a_plausible_waveform():
    clip = synth_clip(4)
    assert clip.sample_rate == 16000
    assert clip.samples.shape == (64000,)
    assert 0.3 < np.abs(clip.samples).max() <= 1.0


# -------------------------------------------------------------------- batches

def test_batch_stream_shapes_and_labels(tiny_corpus):
    man = tiny_corpus
    stream = batch_iter(man, "train", run_cfg(), np.random.default_rng(0))
    batches = list(stream)
    assert all(x.data.shape[1:] == (1, 64000) for x, _ in batches)
    assert sum(x.data.shape[0] for x, _ in batches) == 12
    labels = np.concatenate([y.data for _, y in batches])
    assert set(labels.tolist()) == {0.0, 1.0}


def test_train_batches_stay_class_balanced(tiny_corpus):
    man = tiny_corpus
    for epoch in range(3):
        stream = batch_iter(man, "train", run_cfg(), np.random.default_rng(epoch))
        for x, y in stream:
            if x.data.shape[0] == 8:
                assert 0.25 <= float(y.data.mean()) <= 0.75


def test_minority_class_is_oversampled(tmp_path, rng):
    proto = tmp_path / "protocols"
    proto.mkdir()
    wav = tmp_path / "audio" / "train"
    wav.mkdir(parents=True)
    lines = ["A b0 - - bonafide\n"]
    for i in range(5):
        lines.append(f"A s{i} - S1 spoof\n")
    (proto / "train.txt").write_text("".join(lines))
    for utt in ("b0", "s0", "s1", "s2", "s3", "s4"):
        clip = audio.AudioClip(rng.normal(size=1600).astype(np.float32) * 0.1, 16000)
        audio.save_wav(clip, str(wav / f"{utt}.wav"), fmt="pcm16")
    cfg = run_cfg(model=__import__("psanet.model", fromlist=["PSAConfig"]).PSAConfig(input_len=1600))
    labels = np.concatenate(
        [y.data for _, y in batch_iter(load_manifest(str(tmp_path)), "train",
                                       cfg, np.random.default_rng(0))])
    # the lone bonafide clip is repeated up to the spoof count
    assert labels.sum() == 5 and len(labels) == 10


def test_train_split_with_one_class_is_an_error(tmp_path, rng):
    proto = tmp_path / "protocols"
    proto.mkdir()
    wav = tmp_path / "audio" / "train"
    wav.mkdir(parents=True)
    (proto / "train.txt").write_text("A u0 - - bonafide\n")
    clip = audio.AudioClip(rng.normal(size=1600).astype(np.float32) * 0.1, 16000)
    audio.save_wav(clip, str(wav / "u0.wav"), fmt="pcm16")
    cfg = run_cfg(model=__import__("psanet.model", fromlist=["PSAConfig"]).PSAConfig(input_len=1600))
    with pytest.raises(DataError, match="both classes"):
        list(batch_iter(load_manifest(str(tmp_path)), "train", cfg,
                        np.random.default_rng(0)))


def test_eval_split_keeps_protocol_order_and_is_augmentation_free(tiny_corpus):
    man = tiny_corpus
    cfg = run_cfg(augment_specs=[AugmentSpec("highpass", 0.9)])
    a = np.concatenate([x.data for x, _ in
                        batch_iter(man, "eval", cfg, np.random.default_rng(0))])
    b = np.concatenate([x.data for x, _ in
                        batch_iter(man, "eval", cfg, np.random.default_rng(1))])
    np.testing.assert_array_equal(a, b)
    stream = batch_iter(man, "eval", cfg, np.random.default_rng(2))
    assert stream.pipeline == ("resample", "fix_length", "zscore")
    assert [e.utterance_id for e in stream.entries] == \
           [e.utterance_id for e in man.entries["eval"]]


def test_train_split_pipeline_records_augmentation(tiny_corpus):
    man = tiny_corpus
    cfg = run_cfg(augment_specs=[AugmentSpec("reverb", 0.5)])
    stream = batch_iter(man, "train", cfg, np.random.default_rng(0))
    assert stream.pipeline == ("resample", "fix_length", "zscore", "augment")


def test_scoring_pass_over_train_split_keeps_protocol_order(tiny_corpus):
    man = tiny_corpus
    cfg = run_cfg(augment_specs=[AugmentSpec("highpass", 0.9)])
    stream = batch_iter(man, "train", cfg, np.random.default_rng(0), training=False)
    assert stream.pipeline == ("resample", "fix_length", "zscore")
    assert not stream.training
    got = np.concatenate([x.data for x, _ in stream])
    again = np.concatenate(
        [x.data for x, _ in batch_iter(man, "train", cfg,
                                       np.random.default_rng(5), training=False)])
    np.testing.assert_array_equal(got, again)
    assert got.shape[0] == len(man.entries["train"])


def test_epoch_shuffling_is_seed_deterministic(tiny_corpus):
    man = tiny_corpus
    orders = []
    for seed in (0, 0, 1):
        stream = batch_iter(man, "train", run_cfg(), np.random.default_rng(seed))
        orders.append(stream._epoch_order())
    assert orders[0] == orders[1]
    assert orders[0] != orders[2]


def test_missing_split_raises(tiny_corpus):
    man = tiny_corpus
    with pytest.raises(DataError, match="no split"):
        batch_iter(man, "test", run_cfg(), np.random.default_rng(0))


def test_unreadable_audio_names_the_utterance(tiny_corpus, tmp_path):
    man = tiny_corpus
    victim = man.entries["dev"][0]
    path = man.audio_path("dev", victim.utterance_id)
    with open(path, "rb") as f:
        raw = f.read()
    try:
        with open(path, "wb") as f:
            f.write(raw[:12])
        stream = batch_iter(man, "dev", run_cfg(), np.random.default_rng(0))
        with pytest.raises(DataError, match=victim.utterance_id):
            list(stream)
    finally:
        with open(path, "wb") as f:
            f.write(raw)


# ------------------------------------------------------------ labeling policy

def test_per_attack_mode_filters_systems(tiny_corpus):
    man = tiny_corpus
    entries = select_entries(man, "train", unified_mode=False, attack_filter="S1")
    assert all(e.key == "bonafide" or e.system_id == "S1" for e in entries)
    assert any(e.key == "spoof" for e in entries)
    assert len(entries) < len(man.entries["train"])


def test_per_attack_mode_requires_a_filter(tiny_corpus):
    man = tiny_corpus
    with pytest.raises(DataError, match="attack_filter"):
        select_entries(man, "train", unified_mode=False)


def test_per_attack_mode_with_unknown_system_raises(tiny_corpus):
    man = tiny_corpus
    with pytest.raises(DataError, match="S9"):
        select_entries(man, "train", unified_mode=False, attack_filter="S9")


def test_unified_mode_pools_all_spoof_systems(tiny_corpus):
    man = tiny_corpus
    cfg = run_cfg()
    labels = np.concatenate(
        [y.data for _, y in batch_iter(man, "dev", cfg, np.random.default_rng(0))])
    spoof_count = sum(e.key == "spoof" for e in man.entries["dev"])
    assert (labels == 0.0).sum() == spoof_count


# --------------------------------------------------------------- feature mode

def test_feature_mode_reads_vectors(tmp_path):
    proto = tmp_path / "protocols"
    proto.mkdir()
    (proto / "train.txt").write_text("A u0 - - bonafide\nA u1 - S1 spoof\n")
    feat = tmp_path / "features" / "train"
    feat.mkdir(parents=True)
    rng = np.random.default_rng(0)
    np.save(feat / "u0.npy", rng.normal(size=90).astype(np.float32))
    np.save(feat / "u1.npy", rng.normal(size=(7, 90)).astype(np.float32))  # 2-D map
    man = load_manifest(str(tmp_path), feature_mode=True)
    cfg = run_cfg(model=__import__("psanet.model", fromlist=["PSAConfig"]).PSAConfig(input_len=90),
                  batch_size=2)
    stream = batch_iter(man, "train", cfg, np.random.default_rng(0), training=False)
    assert stream.pipeline == ("fix_length", "zscore")
    (x, y), = list(stream)
    assert x.data.shape == (2, 1, 90)
    # 2-D feature maps collapse to per-coefficient means before length fixing
    assert np.isfinite(x.data).all()


def test_feature_mode_rejects_bad_rank(tmp_path):
    proto = tmp_path / "protocols"
    proto.mkdir()
    (proto / "train.txt").write_text("A u0 - - bonafide\n")
    feat = tmp_path / "features" / "train"
    feat.mkdir(parents=True)
    np.save(feat / "u0.npy", np.zeros((2, 3, 4), np.float32))
    man = load_manifest(str(tmp_path), feature_mode=True)
    cfg = run_cfg(model=__import__("psanet.model", fromlist=["PSAConfig"]).PSAConfig(input_len=12))
    with pytest.raises(DataError, match="u0"):
        list(batch_iter(man, "train", cfg, np.random.default_rng(0), training=False))

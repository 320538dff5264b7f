"""The train/select/evaluate loop on a desk-scale corpus."""

import os

import numpy as np
import pytest

import importlib

train_mod = importlib.import_module("psanet.train")
from psanet.augment import AugmentSpec
from psanet.checkpoint import load_checkpoint
from psanet.errors import ConfigError, DataError, NumericsError
from psanet.metrics import read_score_file
from psanet.model import PSAConfig, reduced_config
from psanet.tensor import Tensor
from psanet.train import (
    HISTORY_HEADER,
    TrainRunConfig,
    evaluate,
    format_history,
    train,
)


def little_run(tmp_path, **kw) -> TrainRunConfig:
    model = reduced_config(PSAConfig(cardinality=4, bottleneck_width=8,
                                     spatial_dropout_rate=0.0, input_len=4000,
                                     head_hidden=8), 4.0)
    base = dict(model=model, epochs=2, batch_size=4, peak_lr=1e-3,
                warmup_steps=4, seed=1, augment_specs=[],
                out_dir=str(tmp_path / "run"))
    base.update(kw)
    return TrainRunConfig(**base)


def test_tiny_run_completes_with_full_history(tiny_corpus, tmp_path):
    cfg = little_run(tmp_path)
    result, history = train(cfg, tiny_corpus)
    assert len(history) == 2
    assert [h.epoch for h in history] == [1, 2]
    for h in history:
        assert np.isfinite(h.train_loss) and np.isfinite(h.dev_loss)
        assert 0.0 <= h.dev_eer <= 1.0
        assert h.lr > 0.0
    assert os.path.exists(result.best_path)
    assert os.path.exists(os.path.join(cfg.out_dir, "history.txt"))


def test_warmup_ramps_the_learning_rate(tiny_corpus, tmp_path):
    # 3 train batches/epoch at batch 4, so epoch 1 ends inside the warmup
    cfg = little_run(tmp_path, warmup_steps=10, epochs=2)
    _, history = train(cfg, tiny_corpus)
    assert history[0].lr < cfg.peak_lr
    assert history[1].lr > history[0].lr


def test_best_checkpoint_has_minimal_dev_loss(tiny_corpus, tmp_path):
    cfg = little_run(tmp_path, epochs=3)
    result, history = train(cfg, tiny_corpus)
    best = min(h.dev_loss for h in history)
    assert result.best_dev_loss == best
    assert history[result.best_epoch - 1].dev_loss == best
    _, meta = load_checkpoint(result.best_path)
    assert meta.epoch == result.best_epoch
    assert meta.dev_loss == pytest.approx(best)


def test_training_is_bit_reproducible(tiny_corpus, tmp_path):
    a = little_run(tmp_path, out_dir=str(tmp_path / "a"))
    b = little_run(tmp_path, out_dir=str(tmp_path / "b"))
    res_a, hist_a = train(a, tiny_corpus)
    res_b, hist_b = train(b, tiny_corpus)
    assert hist_a == hist_b
    with open(res_a.best_path, "rb") as f:
        raw_a = f.read()
    with open(res_b.best_path, "rb") as f:
        raw_b = f.read()
    assert raw_a == raw_b


def test_different_seeds_diverge(tiny_corpus, tmp_path):
    res_a, _ = train(little_run(tmp_path, out_dir=str(tmp_path / "a")), tiny_corpus)
    res_b, _ = train(little_run(tmp_path, seed=2, out_dir=str(tmp_path / "b")),
                     tiny_corpus)
    pa = load_checkpoint(res_a.best_path)[0].named_parameters()
    pb = load_checkpoint(res_b.best_path)[0].named_parameters()
    assert any(not np.array_equal(pa[n].data, pb[n].data) for n in pa)


def test_augmented_run_still_trains(tiny_corpus, tmp_path):
    cfg = little_run(tmp_path, augment_specs=[AugmentSpec("highpass", 0.5),
                                              AugmentSpec("reverb", 0.3)])
    _, history = train(cfg, tiny_corpus)
    assert len(history) == 2 and np.isfinite(history[-1].train_loss)


def test_training_requires_train_and_dev(tiny_corpus, tmp_path):
    import copy

    man = copy.deepcopy(tiny_corpus)
    del man.entries["dev"]
    with pytest.raises(DataError, match="dev"):
        train(little_run(tmp_path), man)


def test_run_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="epochs"):
        little_run(tmp_path, epochs=0).validate()
    with pytest.raises(ConfigError, match="batch_size"):
        little_run(tmp_path, batch_size=0).validate()
    with pytest.raises(ConfigError, match="peak_lr"):
        little_run(tmp_path, peak_lr=0.0).validate()
    with pytest.raises(ConfigError, match="warmup"):
        little_run(tmp_path, warmup_steps=0).validate()


def test_nonfinite_loss_aborts_with_context(tiny_corpus, tmp_path, monkeypatch):
    def poisoned(scores, labels):
        return Tensor(np.float32(np.inf))

    monkeypatch.setattr(train_mod, "bce_loss", poisoned)
    with pytest.raises(NumericsError, match=r"epoch 1, batch 1"):
        train(little_run(tmp_path), tiny_corpus)


def test_history_file_is_the_formatted_table(tiny_corpus, tmp_path):
    cfg = little_run(tmp_path)
    _, history = train(cfg, tiny_corpus)
    with open(os.path.join(cfg.out_dir, "history.txt"), encoding="utf-8") as f:
        text = f.read()
    assert text == format_history(history)
    lines = text.strip().splitlines()
    assert lines[0] == HISTORY_HEADER
    assert len(lines) == 3
    assert lines[1].split()[0] == "1"


def test_per_attack_mode_trains_same_shapes(tiny_corpus, tmp_path):
    uni = little_run(tmp_path, out_dir=str(tmp_path / "u"))
    per = little_run(tmp_path, unified_mode=False, attack_filter="S1",
                     out_dir=str(tmp_path / "p"))
    res_u, _ = train(uni, tiny_corpus)
    res_p, _ = train(per, tiny_corpus)
    pu = load_checkpoint(res_u.best_path)[0].named_parameters()
    pp = load_checkpoint(res_p.best_path)[0].named_parameters()
    assert pu.keys() == pp.keys()
    assert all(pu[n].data.shape == pp[n].data.shape for n in pu)


# ------------------------------------------------------------------- evaluate

@pytest.fixture(scope="module")
def trained(tiny_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    cfg = TrainRunConfig(
        model=reduced_config(PSAConfig(cardinality=4, bottleneck_width=8,
                                       spatial_dropout_rate=0.0, input_len=4000,
                                       head_hidden=8), 4.0),
        epochs=2, batch_size=4, peak_lr=1e-3, warmup_steps=4, seed=1,
        augment_specs=[], out_dir=str(out))
    result, _ = train(cfg, tiny_corpus)
    return result


def test_evaluate_covers_the_split_in_protocol_order(trained, tiny_corpus):
    recs = evaluate(trained.best_path, tiny_corpus, "dev")
    assert [r.utterance_id for r in recs] == \
           [e.utterance_id for e in tiny_corpus.entries["dev"]]
    assert all(0.0 < r.score < 1.0 for r in recs)
    assert {r.key for r in recs} == {"bonafide", "spoof"}


def test_evaluate_twice_writes_identical_score_files(trained, tiny_corpus, tmp_path):
    p1, p2 = str(tmp_path / "a.txt"), str(tmp_path / "b.txt")
    evaluate(trained.best_path, tiny_corpus, "dev", out_path=p1)
    evaluate(trained.best_path, tiny_corpus, "dev", out_path=p2, batch_size=3)
    with open(p1, encoding="utf-8") as f:
        a = f.read()
    with open(p2, encoding="utf-8") as f:
        b = f.read()
    assert a == b
    assert len(read_score_file(p1)) == len(tiny_corpus.entries["dev"])


def test_evaluate_accepts_a_live_model(trained, tiny_corpus):
    model, _ = load_checkpoint(trained.best_path)
    from_path = evaluate(trained.best_path, tiny_corpus, "dev")
    from_model = evaluate(model, tiny_corpus, "dev")
    assert [(r.utterance_id, r.score) for r in from_path] == \
           [(r.utterance_id, r.score) for r in from_model]


def test_evaluate_missing_split_raises(trained, tiny_corpus):
    with pytest.raises(DataError, match="no split"):
        evaluate(trained.best_path, tiny_corpus, "holdout")

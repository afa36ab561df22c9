import csv
from dataclasses import replace

import numpy as np
import pytest

from mpsum import checkpoint as ckpt_io
from mpsum.config import RunConfig, load_config
from mpsum.errors import CheckpointError, ConfigError, DegenerateLabels
from mpsum.numerics import rng_derive
from mpsum.selfcheck import lora_path_error
from mpsum.ssm import init_adapters
from mpsum.text import load_reviews, prepare_review
from mpsum.training import (_batches, _n_batches, evaluate_loss, head_logits, labeled_examples,
                            pair_features, score_sentences, train_head, train_lora)

from conftest import FIXTURE, FIXTURE_CONFIG


@pytest.fixture(scope="module")
def prepared():
    return [prepare_review(r) for r in load_reviews(FIXTURE)]


@pytest.fixture(scope="module")
def fixture_config():
    return load_config(FIXTURE_CONFIG)


@pytest.fixture(scope="module")
def head_result(prepared, fixture_config):
    return train_head(prepared, fixture_config)


def test_batches_never_leave_a_single_row():
    for n in range(2, 100):
        for size in (2, 3, 8, 32):
            b = _batches(n, size, rng_derive(0, "shuffle"))
            assert min(len(x) for x in b) >= 2 and len(b) == _n_batches(n, size)
            assert sorted(np.concatenate(b).tolist()) == list(range(n))


def test_head_training_fits_fixture(head_result):
    assert head_result.trace[-1].accuracy >= 0.9
    assert len(head_result.trace) == 100
    assert head_result.checkpoint.compressor.n_clusters == 16


def test_head_training_is_deterministic(prepared, fixture_config, head_result):
    again = train_head(prepared, fixture_config)
    assert ckpt_io.dumps(again.checkpoint) == ckpt_io.dumps(head_result.checkpoint)


def test_single_class_rejected(prepared):
    only_neg = [replace(p, sentences=[s for s in p.sentences if s.label == 0]) for p in prepared]
    with pytest.raises(DegenerateLabels):
        train_head(only_neg, RunConfig(epochs=1))


def test_fresh_adapters_leave_predictions_unchanged(prepared, head_result):
    ck = head_result.checkpoint
    ex = labeled_examples(prepared)
    adapters = init_adapters(ck.params.config, 42)
    base = head_logits(pair_features(ex, ck), ck)
    with_ads = head_logits(pair_features(ex, ck, adapters), ck)
    assert np.array_equal(base, with_ads)


def test_alpha_zero_adapters_are_inert(prepared, head_result):
    ck = head_result.checkpoint
    ex = labeled_examples(prepared)[:12]
    adapters = init_adapters(ck.params.config, 1, alpha=0.0)
    for ad in adapters.values():
        ad.b[:] = 1.0
    assert np.array_equal(head_logits(pair_features(ex, ck), ck),
                          head_logits(pair_features(ex, ck, adapters), ck))


def test_lora_phase_reduces_loss(prepared, fixture_config, head_result):
    cfg = fixture_config.merged({"lora": {"epochs": 2}, "trace_every": 2})
    res = train_lora(prepared, cfg, base=head_result)
    lora_rows = [t for t in res.trace if t.phase == "lora"]
    assert lora_rows[0].step == 0 and lora_rows[-1].step == 2 * 6
    assert lora_rows[-1].loss < lora_rows[0].loss
    # head-only checkpoint must be untouched by the LoRA phase
    assert head_result.checkpoint.adapters is None
    loss, _ = evaluate_loss(labeled_examples(prepared), res.checkpoint, res.checkpoint.adapters)
    assert loss == pytest.approx(lora_rows[-1].loss, rel=0, abs=0)


@pytest.mark.parametrize("seed", range(5))
def test_end_to_end_gradients(seed):
    assert lora_path_error(seed) <= 1e-4


def test_end_to_end_gradients_through_taylor_branch():
    # a threshold of 1 routes every discretization through the series branch
    assert lora_path_error(0, taylor_threshold=1.0) <= 1e-4


def test_end_to_end_gradients_without_compression():
    assert lora_path_error(1, compression=False) <= 1e-4


def test_compression_ablation(tmp_path, prepared):
    cfg = RunConfig(epochs=3, compression=False, lora=replace(RunConfig().lora, epochs=1))
    res = train_lora(prepared, cfg)
    ck = res.checkpoint
    assert ck.compressor is None and ck.head.w.shape == (2 * ck.params.config.d_model,)
    ckpt_io.save(ck, tmp_path / "a.json")
    ckpt_io.save(ckpt_io.load(tmp_path / "a.json"), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert score_sentences(ck, "x y", ["x", "y"]).shape == (2,)


def test_score_sentences_probabilities(head_result):
    probs = score_sentences(head_result.checkpoint, "great lamp. box came late",
                            ["great lamp", "box came late"])
    assert probs.shape == (2,) and np.all((probs > 0) & (probs < 1))


def test_checkpoint_round_trip(tmp_path, head_result):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    ckpt_io.save(head_result.checkpoint, p1)
    ckpt_io.save(ckpt_io.load(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()
    bad = p1.read_text().replace("mpsum_checkpoint_v1", "mpsum_checkpoint_v0")
    (tmp_path / "bad.json").write_text(bad)
    with pytest.raises(CheckpointError):
        ckpt_io.load(tmp_path / "bad.json")


def test_config_validation_and_merge(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(tau_rouge=1.1)
    with pytest.raises(ConfigError):
        RunConfig().merged({"nope": 1})
    with pytest.raises(ConfigError):
        RunConfig().merged({"lora": {"rank": 0}})
    cfg = RunConfig().merged({"lora": {"rank": 8}, "encoder": {"d_model": 16}})
    assert cfg.lora.rank == 8 and cfg.lora.alpha == 32.0 and cfg.encoder.d_model == 16
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    (tmp_path / "c.json").write_text('{"lr": 0.001}')
    assert load_config(tmp_path / "c.json").lr == 0.001

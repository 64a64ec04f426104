import numpy as np
import pytest

from moodreader.experiment import (
    FusionInvariantError,
    FusionMonitor,
    TrainConfig,
    TrainDivergedError,
    channel_attention,
    evaluate,
    metrics_from_predictions,
    summarize_runs,
    train,
)
from moodreader.model import ABLATION_ARMS, FULL, Batch, ModelConfig, MoodReader, parse_preset
from moodreader.nn import ConfigError, DataError

SMALL = dict(n_channels=6, n_windows=2, n_bands=3, d_unified=8, spatial_heads=2, temporal_heads=2, eye_heads=2,
             fusion_heads=2, eye_len=2, d_eye=4, d_encoder=8)


def small_model(preset=FULL, seed=0, **kw):
    return MoodReader(ModelConfig(preset=preset, **{**SMALL, **kw}), seed)


def small_batch(n=24, seed=0, n_classes=3, signal=2.0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    de = rng.normal(size=(n, 2, 3, 6))
    de[:, :, :, :2] += signal * (labels[:, None, None, None] - 1)
    eye = rng.normal(size=(n, 2, 4)) + labels[:, None, None]
    return Batch(de, labels, eye, rng.normal(size=(n, 8)))


# -- presets -----------------------------------------------------------------------
@pytest.mark.parametrize("arm", ABLATION_ARMS + (FULL,))
def test_audit_matches_preset_name(arm):
    model = small_model(arm)
    assert model.audit == parse_preset(arm).components


def test_stb_never_builds_interlinks():
    model = small_model("STB+CF")
    assert "interlink" not in model.audit
    assert not any("link" in name for name, _ in model.named_parameters())


@pytest.mark.parametrize(
    "name,expect",
    [
        ("STB+CF", (False, False, False, "cf")),
        ("STIB+Encoder+MLF", (True, True, False, "mlf")),
        ("STIB+Eye+MLF", (True, False, True, "mlf")),
        (FULL, (True, True, True, "mlf")),
    ],
)
def test_parse_preset(name, expect):
    p = parse_preset(name)
    assert (p.interlink, p.encoder, p.eye, p.fusion) == expect


@pytest.mark.parametrize("bad", ["", "STB", "XYZ+CF", "STIB+MLF", "STIB+Eye+Eye+CF", "STIB+Eye+Encoder+MLF",
                                 "STIB+Audio+CF"])
def test_unknown_presets_rejected(bad):
    with pytest.raises(ConfigError):
        parse_preset(bad)


def test_reference_shape_ledger():
    model = MoodReader(ModelConfig(preset=FULL), 0)
    rng = np.random.default_rng(0)
    batch = Batch(rng.normal(size=(2, 4, 5, 62)), None, rng.normal(size=(2, 4, 8)), rng.normal(size=(2, 128)))
    model.eval()
    f_s, f_t, extra = model.streams(batch)
    assert [t.shape for t in [f_s, f_t, *extra]] == [(2, 32)] * 4
    assert model(batch).shape == (2, 3)


def test_missing_modalities_raise():
    model = small_model(FULL)
    b = small_batch(4)
    with pytest.raises(DataError, match="latents"):
        model(Batch(b.de, b.labels, b.eye, None))
    with pytest.raises(DataError, match="eye"):
        model(Batch(b.de, b.labels, None, b.latents))
    with pytest.raises(DataError, match="shape"):
        model(Batch(b.de[:, :1], b.labels, b.eye, b.latents))


def test_checkpoint_round_trip(tmp_path):
    model = small_model(FULL, seed=3)
    model.save(tmp_path / "m.ckpt", {"note": "x"})
    loaded, meta = MoodReader.load(tmp_path / "m.ckpt")
    assert meta["note"] == "x"
    b = small_batch(4)
    model.eval(), loaded.eval()
    np.testing.assert_array_equal(model(b).data, loaded(b).data)


# -- metrics -----------------------------------------------------------------------
def test_constant_prediction_on_balanced_data():
    labels = np.repeat([0, 1, 2], 20)
    m = metrics_from_predictions(np.zeros(60, dtype=int), labels, 3)
    assert m.accuracy == pytest.approx(1 / 3)
    assert [sum(r) for r in m.confusion] == [20, 20, 20]


def test_accuracy_matches_independent_count():
    rng = np.random.default_rng(0)
    labels, pred = rng.integers(0, 5, 97), rng.integers(0, 5, 97)
    m = metrics_from_predictions(pred, labels, 5)
    correct = 0
    for a, b in zip(labels, pred):
        correct += int(a == b)
    assert m.accuracy == correct / 97
    assert [sum(r) for r in m.confusion] == [int(np.sum(labels == c)) for c in range(5)]


def test_summarize_runs_std_across_runs():
    runs = [metrics_from_predictions(np.array(p), np.array([0, 1, 2, 0]), 3)
            for p in ([0, 1, 2, 0], [0, 1, 0, 0], [1, 1, 1, 1])]
    s = summarize_runs(runs)
    assert s.runs == [1.0, 0.75, 0.25]
    assert s.accuracy == pytest.approx(2 / 3)
    assert s.accuracy_std == pytest.approx(np.std([1.0, 0.75, 0.25]))


def test_evaluate_rejects_class_mismatch():
    model = small_model(FULL)
    b = small_batch(6, n_classes=5)
    with pytest.raises(ConfigError, match="classes"):
        evaluate(model, b)


# -- training -----------------------------------------------------------------------
def test_training_is_deterministic():
    b = small_batch()
    cfg = TrainConfig(steps=20, batch_size=8, lr=3e-3, eval_every=10)
    results = []
    for _ in range(2):
        model = small_model(FULL, seed=5)
        r = train(model, b, cfg, seed=5, attention_batch=b)
        results.append((r.history, r.best_step, [s["weights"] for s in r.snapshots]))
    assert results[0][0] == results[1][0]
    assert results[0][1] == results[1][1]
    for a, c in zip(results[0][2], results[1][2]):
        np.testing.assert_array_equal(a, c)


def test_training_fits_small_separable_set():
    b = small_batch(24, signal=3.0)
    model = small_model("STIB+Eye+MLF", seed=0)
    r = train(model, b, TrainConfig(steps=150, batch_size=8, lr=3e-3, eval_every=25), seed=0)
    model.load_state_dict(r.best_state)
    assert evaluate(model, b).accuracy == 1.0
    assert r.history[-1] < r.history[0]


def test_snapshots_at_fixed_fractions():
    b = small_batch(8)
    r = train(small_model(FULL), b, TrainConfig(steps=8, batch_size=4, eval_every=4), attention_batch=b)
    assert [(s["tag"], s["step"]) for s in r.snapshots] == [("0%", 0), ("25%", 2), ("50%", 4), ("100%", 8)]
    for s in r.snapshots:
        assert s["weights"].shape == (6,)
        assert s["weights"].sum() == pytest.approx(1.0)


def test_monitor_sees_every_pair():
    b = small_batch(8)
    monitor = FusionMonitor()
    train(small_model(FULL), b, TrainConfig(steps=5, batch_size=4, eval_every=5), monitor=monitor)
    assert monitor.checks > 0 and monitor.max_deviation <= 1e-6


def test_monitor_rejects_off_simplex_weights():
    with pytest.raises(FusionInvariantError):
        FusionMonitor()("st", np.array([0.6]), np.array([0.5]))


def test_divergence_restores_last_good_state():
    b = small_batch(8)
    bad = Batch(b.de.copy(), b.labels, b.eye, b.latents)
    bad.de[0, 0, 0, 0] = np.nan
    model = small_model(FULL)
    before = model.state_dict()
    with pytest.raises(TrainDivergedError) as exc:
        train(model, bad, TrainConfig(steps=5, batch_size=8), seed=0)
    for k, v in before.items():
        np.testing.assert_array_equal(exc.value.last_good[k], v)


def test_training_needs_two_samples():
    with pytest.raises(ConfigError):
        train(small_model(FULL), small_batch(1), TrainConfig(steps=1))


def test_zero_query_key_weights_give_uniform_channel_attention():
    model = small_model("STB+CF")
    for blk in model.blocks.spatial:
        blk.attn.wq.data[:] = 0.0
    w = channel_attention(model, small_batch(5))
    np.testing.assert_allclose(w, 1 / 6, rtol=1e-6)

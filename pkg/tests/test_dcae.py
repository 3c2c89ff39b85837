import json

import numpy as np
import pytest

from hakka_asr import autodiff as ad
from hakka_asr import dcae, toy
from hakka_asr import network as nw

from builders import TINY_SPEC, dcae_grad_error, tiny_problem


@pytest.mark.parametrize("variant", ["c", "hc", "pc"])
def test_full_loss_gradient(variant):
    assert dcae_grad_error(variant, seed=0) <= 1e-4


@pytest.mark.parametrize("variant", ["c", "hc", "pc"])
def test_grad_check_points_avoid_relu_kinks(variant, monkeypatch):
    # finite differences are only meaningful where every ReLU input is
    # clearly away from zero compared with the step size
    seen = []
    relu = ad.relu
    monkeypatch.setattr(ad, "relu", lambda x: seen.append(np.abs(ad.as_tensor(x).data).min()) or relu(x))
    for seed in range(10):
        model, loss, point = tiny_problem(variant, seed)
        loss({k: ad.Tensor(v) for k, v in point.items()})
    assert min(seen) > 1e-4


def test_full_sized_streams_gradient():
    spec = nw.NetworkSpec(input_dim=3, num_pdf_targets=3, stream_dilations=(3, 6, 9), num_layers=1,
                          embed_dim=3, bottleneck_dim=2, final_projection_dim=3)
    model = dcae.build_dcae("c", spec, 0, decoder_hidden=2)
    feats = np.random.default_rng(0).standard_normal((spec.min_frames + 2, 3))
    weights = dcae.LossWeights(mmi=0.0, ce=1.0)
    labels = np.arange(nw.output_frames(spec, feats.shape[0])) % 3
    targets = dcae.Targets(feats=feats, labels=labels)

    def loss(tensors):
        out = dcae.dcae_forward("c", model, feats, tensors=tensors)
        return dcae.dcae_objective("c", weights, out, targets)[0]

    from hakka_asr.autodiff import grad_check
    assert grad_check(loss, dict(model.params)) <= 1e-4


def test_variants_differ_in_parameters():
    names = {v: set(tiny_problem(v, 0)[0].params) for v in ("c", "hc", "pc")}
    assert not any(k.startswith("dec.enh") for k in names["c"])
    assert any(k.startswith("dec.enh") for k in names["pc"])
    assert any(k.startswith("enc2.") for k in names["hc"])
    assert not any(k.startswith("enc2.") for k in names["pc"])


def test_breakdown_is_weighted_sum():
    model, _, _ = tiny_problem("pc", 1)
    spec = model.spec
    r = np.random.default_rng(0)
    feats = r.standard_normal((12, spec.input_dim))
    weights = dcae.LossWeights(1.0, 0.3, 0.4, 0.5)
    out = dcae.dcae_forward("pc", model, feats, feats, weights)
    labels = np.array([0, 1, 2, 1])
    # mmi weight > 0 without graphs is a configuration error
    with pytest.raises(dcae.ConfigError, match="mmi"):
        dcae.dcae_objective("pc", weights, out, dcae.Targets(feats, labels=labels, clean=feats))
    weights = dcae.LossWeights(0.0, 0.3, 0.4, 0.5)
    total, b = dcae.dcae_objective("pc", weights, out, dcae.Targets(feats, labels=labels, clean=feats))
    assert b.mmi is None
    assert b.total == pytest.approx(0.3 * b.ce + 0.4 * b.recon_input + 0.5 * b.recon_clean)
    assert float(total.data) == b.total


def test_enhancement_needs_clean_features():
    model, _, _ = tiny_problem("hc", 0)
    with pytest.raises(dcae.ConfigError, match="clean"):
        dcae.dcae_forward("hc", model, np.zeros((12, 4)), None, dcae.LossWeights())


def test_variant_mismatch():
    model, _, _ = tiny_problem("c", 0)
    with pytest.raises(dcae.ConfigError):
        dcae.dcae_forward("pc", model, np.zeros((12, 4)))


def test_negative_weight_rejected():
    with pytest.raises(dcae.ConfigError):
        dcae.LossWeights(mmi=-1.0)


def test_subsample_labels_takes_group_centres():
    assert dcae.subsample_labels(np.arange(10), 3).tolist() == [1, 4, 7, 9]


def toy_examples(n=6):
    data = toy.toy_training_set(num_utts=n, dim=4, num_pdfs=3, seed=0, min_frames=24, max_frames=30)
    return [dcae.Example(f"u{i}", f, l) for i, (f, l) in enumerate(data)]


def run_training(tmp_path, name, epochs=3, lr=0.002):
    spec = nw.NetworkSpec(**TINY_SPEC)
    exs = toy_examples()
    den = dcae.denominator_from_examples(exs, 3, 3)
    ready = dcae.prepare_examples(exs, den, 3)
    model = dcae.build_dcae("c", spec, 0, decoder_hidden=3)
    log_path = tmp_path / f"{name}.jsonl"
    cfg = dcae.TrainConfig(epochs=epochs, learning_rate=lr)
    result = dcae.train(model, ready, dcae.LossWeights(), cfg, den, log_path=log_path,
                        checkpoint_path=tmp_path / f"{name}.ckpt")
    return result, log_path


def test_training_log_is_reproducible(tmp_path):
    r1, log1 = run_training(tmp_path, "a")
    r2, log2 = run_training(tmp_path, "b")
    assert log1.read_bytes() == log2.read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    records = [json.loads(x) for x in log1.read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3]


def test_zero_learning_rate_leaves_parameters_unchanged(tmp_path):
    spec = nw.NetworkSpec(**TINY_SPEC)
    before = dcae.build_dcae("c", spec, 0, decoder_hidden=3).params
    result, _ = run_training(tmp_path, "z", epochs=2, lr=0.0)
    assert all(np.array_equal(before[k], result.best_params[k]) for k in before)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_restores_best(tmp_path):
    with pytest.raises(dcae.DivergenceError) as err:
        run_training(tmp_path, "d", epochs=3, lr=1e200)
    assert err.value.checkpoint is not None


def test_saved_model_reloads(tmp_path):
    run_training(tmp_path, "m", epochs=1)
    model, header = dcae.load_model(tmp_path / "m.ckpt")
    assert model.variant is dcae.Variant.C
    assert header["meta"]["best_epoch"] == 1


def test_infeasible_examples_are_skipped(caplog):
    exs = toy_examples(3)
    # a label run per frame cannot fit into a third as many output frames
    exs.append(dcae.Example("bad", np.zeros((12, 4)), np.array([0, 1, 2] * 4)))
    den = dcae.denominator_from_examples(exs, 3, 3)
    ready = dcae.prepare_examples(exs, den, 3)
    assert [e.utt_id for e in ready] == ["u0", "u1", "u2"]
    assert "skipping bad" in caplog.text

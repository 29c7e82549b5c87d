import math

import numpy as np
import pytest

from topicflow import corpus as C
from topicflow.ntm import FlowNTM, NtmConfig
from topicflow.numerics import Parameter, Tensor, functional as F, gradient_of
from topicflow.summarizer import Summarizer, TransformerConfig
from topicflow.synthetic import copy_pairs, topic_corpus
from topicflow.training import (
    Adam,
    TrainConfig,
    TrainingDiverged,
    batch_sum_loss,
    clip_and_step,
    clip_gradients,
    evaluate_loss,
    joint_loss,
    pretrain_ntm,
    stream,
    sum_loss,
    train_joint,
    warmup_scale,
)


# sum_loss ------------------------------------------------------------------------------

def test_uniform_logits_give_log_v():
    V = 7
    loss = sum_loss(Tensor(np.zeros((2, 3, V))), np.array([[1, 2, 3], [4, 5, 6]]), np.ones((2, 3), bool))
    assert loss.item() == pytest.approx(math.log(V), abs=1e-12)


def test_confident_logits_give_near_zero_loss():
    logits = np.full((1, 3, 5), -60.0)
    targets = np.array([[0, 3, 1]])
    logits[0, np.arange(3), targets[0]] = 60.0
    assert sum_loss(Tensor(logits), targets, np.ones((1, 3), bool)).item() < 1e-40


def test_hand_computed_two_token_loss():
    logits = np.log(np.array([[[0.5, 0.5, 1e-300], [0.25, 0.75, 1e-300]]]))
    loss = sum_loss(Tensor(logits), np.array([[0, 0]]), np.ones((1, 2), bool)).item()
    assert loss == pytest.approx(1.5 * math.log(2), abs=1e-12)


def test_masked_positions_are_ignored():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(1, 4, 6))
    targets = np.array([[1, 2, 3, 4]])
    mask = np.array([[True, True, False, False]])
    full = sum_loss(Tensor(logits[:, :2]), targets[:, :2], np.ones((1, 2), bool)).item()
    assert sum_loss(Tensor(logits), targets, mask).item() == pytest.approx(full, abs=1e-14)


def test_batch_loss_is_mean_of_example_losses():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(2, 4, 6))
    targets = rng.integers(0, 6, size=(2, 4))
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], bool)
    a = sum_loss(Tensor(logits[:1]), targets[:1], mask[:1]).item()
    b = sum_loss(Tensor(logits[1:, :2]), targets[1:, :2], mask[1:, :2]).item()
    assert sum_loss(Tensor(logits), targets, mask).item() == pytest.approx((a + b) / 2, abs=1e-14)


def test_fully_masked_batch_rejected():
    with pytest.raises(ValueError):
        sum_loss(Tensor(np.zeros((1, 2, 3))), np.zeros((1, 2), int), np.zeros((1, 2), bool))


# joint loss ------------------------------------------------------------------------------

def test_joint_loss_examples():
    assert joint_loss(2.0, -4.0, 0.75) == 5.0
    assert joint_loss(2.0, -4.0, 0.0) == 2.0
    assert TrainConfig().lambda_ntm == 0.75


def _tiny_models(seed=0, v=12, v_bow=9, t=3):
    ntm = FlowNTM(NtmConfig(v_bow, n_topics=t, hidden=8, flow_length=2), np.random.default_rng(seed))
    cfg = TransformerConfig(v, n_topics=t, layers_enc=1, layers_dec=1, d_model=8, heads=2, ffn_dim=16,
                            max_positions=32, dropout=0.0)
    return ntm, Summarizer(cfg, np.random.default_rng(seed + 1), np.random.default_rng(seed + 2))


def _tiny_batch(rng, v=12, v_bow=9):
    exs = []
    for n, m in ((6, 4), (5, 5)):
        x = rng.integers(5, v, size=n)
        x[0] = C.CLS
        y = np.concatenate([[C.BOS], rng.integers(5, v, size=m - 2), [C.EOS]])
        exs.append(C.EncodedExample(x, y, rng.poisson(2.0, v_bow).astype(float)))
    return C.collate(exs)


def test_lambda_zero_is_summarization_loss_and_leaves_phi_untouched():
    rng = np.random.default_rng(3)
    ntm, model = _tiny_models()
    batch = _tiny_batch(rng)
    elbo, theta, _ = ntm.forward(batch.x_bow, ntm.noise(rng, 2))
    ls = batch_sum_loss(model, batch, theta)
    total = joint_loss(ls, F.mean(elbo), 0.0)
    assert total.item() == ls.item()
    params = dict(ntm.named_parameters())
    grads = gradient_of(total, [params["f_phi.weight"], params["f_phi.bias"], params["encoder.weight"]])
    assert not grads[params["f_phi.weight"]].any()
    assert not grads[params["f_phi.bias"]].any()
    assert grads[params["encoder.weight"]].any()  # theta still feeds the gates


# clipping and optimisers -----------------------------------------------------------------

def _with_grads(*grads):
    ps = []
    for i, g in enumerate(grads):
        p = Parameter(np.zeros_like(g), f"p{i}")
        p.grad = np.array(g, dtype=float)
        ps.append(p)
    return ps


def test_small_gradients_are_not_clipped():
    ps = _with_grads([0.3, 0.4], [0.0])
    norm = clip_gradients(ps, 1.0)
    assert norm == 0.5
    np.testing.assert_array_equal(ps[0].grad, [0.3, 0.4])


def test_gradients_at_twice_the_limit_are_halved():
    ps = _with_grads([1.2, 1.6], [0.0, 0.0])  # norm 2
    clip_gradients(ps, 1.0)
    np.testing.assert_allclose(ps[0].grad, [0.6, 0.8], rtol=1e-15)


def test_adam_solves_a_quadratic():
    p = Parameter(np.array([3.0]), "p")
    opt = Adam([p], lr=1e-2)
    for _ in range(5000):
        p.grad = 2.0 * (p.data - 1.0)
        clip_and_step(opt, clip_norm=0.0)
    assert abs(p.data[0] - 1.0) <= 1e-6


def test_adam_first_step_moves_by_lr():
    p = Parameter(np.array([0.0, 0.0]), "p")
    opt = Adam([p], lr=0.1)
    p.grad = np.array([5.0, -0.01])
    opt.step()
    np.testing.assert_allclose(p.data, [-0.1, 0.1], rtol=1e-6)


@pytest.mark.parametrize("step, warmup, expected", [(1, 100, 0.01), (50, 100, 0.5), (100, 100, 1.0),
                                                    (500, 100, 1.0), (1, 0, 1.0)])
def test_warmup_scale(step, warmup, expected):
    assert warmup_scale(step, warmup) == expected


def test_streams_are_independent_and_reproducible():
    a = stream(0, "shuffle").random(4)
    np.testing.assert_array_equal(a, stream(0, "shuffle").random(4))
    assert not np.array_equal(a, stream(0, "noise").random(4))
    assert not np.array_equal(a, stream(1, "shuffle").random(4))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda_ntm=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(checkpoint_top_k=0)
    with pytest.raises(ValueError):
        TrainConfig(ntm_optimizer="sgd")


# NTM pretraining -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_topics():
    return topic_corpus(n_docs=200, n_topics=3, v_bow=30, doc_len=40, seed=1).counts


def _pretrain(x, flow_length=4, **kw):
    cfg = TrainConfig(lr_ntm=3e-3, ntm_batch_size=32, ntm_epochs=kw.pop("epochs", 15), seed=0, **kw)
    return pretrain_ntm(x, NtmConfig(30, n_topics=3, hidden=32, flow_length=flow_length), cfg)


def test_pretraining_reduces_the_loss(small_topics):
    losses = _pretrain(small_topics).epoch_losses
    assert len(losses) == 15
    assert losses[-1] < losses[0]


def test_pretraining_is_deterministic(small_topics):
    a, b = _pretrain(small_topics, epochs=3), _pretrain(small_topics, epochs=3)
    assert a.epoch_losses == b.epoch_losses
    for (name, x), (_, y) in zip(a.model.named_parameters(), b.model.named_parameters()):
        np.testing.assert_array_equal(x.data, y.data, err_msg=name)


def test_flow_is_at_least_as_good_as_plain_vae(small_topics):
    flow = _pretrain(small_topics, flow_length=4).epoch_losses[-1]
    plain = _pretrain(small_topics, flow_length=0).epoch_losses[-1]
    print(f"final loss K=4 {flow:.4f}  K=0 {plain:.4f}")
    assert flow <= plain * 1.01


def test_adadelta_option(small_topics):
    res = _pretrain(small_topics, epochs=3, ntm_optimizer="adadelta")
    assert all(math.isfinite(x) for x in res.epoch_losses)
    assert res.epoch_losses != _pretrain(small_topics, epochs=3).epoch_losses


def test_pretraining_divergence_is_reported(small_topics):
    bad = small_topics.copy()
    bad[5, 0] = np.inf
    with pytest.raises(TrainingDiverged) as info:
        _pretrain(bad, epochs=2)
    assert isinstance(info.value.last_good, FlowNTM)


def test_pretraining_shape_check(small_topics):
    with pytest.raises(ValueError):
        _pretrain(small_topics[:, :10])


# joint training ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_data():
    records = copy_pairs(8, seed=1)
    vocab, bow = C.build_vocabs(records, 1, set())
    return [C.encode(r, vocab, bow) for r in records], len(vocab), len(bow)


def _joint(tiny_data, steps=6, use_topic=True, **kw):
    exs, v, v_bow = tiny_data
    gate = kw.pop("gate_override", None)
    ntm = kw.pop("ntm", None)
    model_cfg = TransformerConfig(v, n_topics=3, layers_enc=1, layers_dec=1, d_model=8, heads=2, ffn_dim=16,
                                  max_positions=64, dropout=0.1, use_topic=use_topic)
    cfg = TrainConfig(lr_joint=1e-3, batch_size=4, max_steps=steps, eval_interval=2, warmup_steps=2,
                      eval_rouge=False, seed=3, **kw)
    return train_joint(exs, exs[:4], model_cfg, cfg, ntm=ntm,
                       ntm_config=NtmConfig(v_bow, n_topics=3, hidden=8, flow_length=2), gate_override=gate)


@pytest.mark.parametrize("top_k, steps, expected", [(3, 6, 3), (2, 6, 2), (5, 6, 3), (3, 1, 1)])
def test_retained_checkpoint_count(tiny_data, top_k, steps, expected):
    res = _joint(tiny_data, steps=steps, checkpoint_top_k=top_k)
    assert len(res.checkpoints) == expected
    losses = [c.val_loss for c in res.checkpoints]
    assert losses == sorted(losses)


def test_retained_checkpoints_are_the_lowest_validation_losses(tiny_data):
    res = _joint(tiny_data, steps=8, checkpoint_top_k=2)
    valid = sorted(r["loss"] for r in res.metrics if r["split"] == "valid")
    assert [c.val_loss for c in res.checkpoints] == valid[:2]


def test_checkpoint_restores_its_validation_loss(tiny_data):
    exs = tiny_data[0]
    res = _joint(tiny_data, steps=6)
    best = res.checkpoints[0]
    res.load(best)
    assert evaluate_loss(res.summarizer, res.ntm, [C.collate(exs[:4])]) == best.val_loss


def test_joint_training_is_deterministic(tiny_data):
    a, b = _joint(tiny_data), _joint(tiny_data)
    assert a.train_losses == b.train_losses
    assert a.metrics == b.metrics


def test_metrics_rows(tiny_data):
    res = _joint(tiny_data, steps=2)
    splits = [r["split"] for r in res.metrics]
    assert splits == ["train", "train_ntm", "train", "train_ntm", "valid"]
    assert set(res.metrics[0]) == {"step", "split", "loss", "rouge1", "rouge2", "rougeL"}


def test_gate_zero_matches_the_baseline_on_a_small_run(tiny_data):
    gated = _joint(tiny_data, gate_override=0.0)
    plain = _joint(tiny_data, use_topic=False)
    assert gated.train_losses == plain.train_losses
    assert [r for r in gated.metrics if r["split"] != "train_ntm"] == plain.metrics
    assert plain.ntm is None


def test_frozen_topic_model_does_not_move(tiny_data):
    exs, _, v_bow = tiny_data
    ntm = FlowNTM(NtmConfig(v_bow, n_topics=3, hidden=8, flow_length=2), np.random.default_rng(0))
    before = {k: v.copy() for k, v in ntm.state_dict().items()}
    _joint(tiny_data, ntm=ntm, freeze_ntm=True)
    for k, v in ntm.state_dict().items():
        np.testing.assert_array_equal(v, before[k], err_msg=k)
    _joint(tiny_data, ntm=ntm)
    assert any(not np.array_equal(v, before[k]) for k, v in ntm.state_dict().items())


def test_non_finite_input_aborts(tiny_data):
    exs, v, v_bow = tiny_data
    bad = [C.EncodedExample(e.x_ids, e.y_ids, e.x_bow.copy()) for e in exs]
    for e in bad:
        e.x_bow[0] = np.inf
    with pytest.raises(TrainingDiverged):
        _joint((bad, v, v_bow))


def test_topic_count_mismatch_rejected(tiny_data):
    _, _, v_bow = tiny_data
    ntm = FlowNTM(NtmConfig(v_bow, n_topics=5, hidden=8, flow_length=0), np.random.default_rng(0))
    with pytest.raises(ValueError):
        _joint(tiny_data, ntm=ntm)


def test_empty_training_set_rejected(tiny_data):
    with pytest.raises(ValueError):
        _joint(([], *tiny_data[1:]))


# overfit corpus ----------------------------------------------------------------------------

def test_smoothed_training_loss_keeps_falling(overfit_run):
    result, _ = overfit_run
    losses = np.array(result.train_losses)
    warm = 100
    moving = np.convolve(losses[warm:], np.ones(100) / 100, mode="valid")
    ratios = moving[1:] / moving[:-1]
    assert ratios.max() <= 1.02, ratios.max()
    assert moving[-1] < moving[0]

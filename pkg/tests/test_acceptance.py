"""The ten end-to-end acceptance criteria, each printing one PASS/FAIL line."""
import json
import time
from importlib import resources

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from topicflow import corpus as C
from topicflow.cli import main
from topicflow.eval import cv_coherence, rouge_l, rouge_n
from topicflow.ntm import FlowNTM, NtmConfig, PlanarFlow, apply_flow, gaussian_log_density, sample_latent
from topicflow.numerics import Tensor, functional as F, grad_check
from topicflow.summarizer import Summarizer, TransformerConfig, beam_search, greedy_search
from topicflow.synthetic import topic_corpus
from topicflow.training import (
    TrainConfig,
    batch_sum_loss,
    evaluate_loss,
    greedy_outputs,
    joint_loss,
    pretrain_ntm,
)

from oracles import ToyLM, enumerate_best, numeric_jacobian, rouge_l_oracle, rouge_n_oracle

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nacceptance {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


# 1 --------------------------------------------------------------------------------------

def test_1_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        ntm = FlowNTM(NtmConfig(50, n_topics=10, d_z=10, hidden=8, flow_length=4), rng)
        x = rng.poisson(1.0, (3, 50)).astype(float)
        noise = rng.standard_normal((3, 10))
        rep = grad_check(lambda: F.sum(ntm.forward(x, noise)[0]), ntm.parameters(), tolerance=1e-4)
        worst = max(worst, rep.max_rel_error)

        ntm = FlowNTM(NtmConfig(9, n_topics=3, hidden=6, flow_length=2), rng)
        model = Summarizer(TransformerConfig(8, n_topics=3, layers_enc=1, layers_dec=1, d_model=4, heads=2,
                                             ffn_dim=8, max_positions=16, dropout=0.0), rng, rng)
        exs = []
        for n, m in ((6, 4), (5, 5)):
            ids = rng.integers(5, 8, size=n)
            ids[0] = C.CLS
            y = np.concatenate([[C.BOS], rng.integers(5, 8, size=m - 2), [C.EOS]])
            exs.append(C.EncodedExample(ids, y, rng.poisson(2.0, 9).astype(float)))
        batch = C.collate(exs)
        noise = rng.standard_normal((2, 3))

        def loss():
            elbo, theta, _ = ntm.forward(batch.x_bow, noise)
            return joint_loss(batch_sum_loss(model, batch, theta), F.mean(elbo), 0.75)

        rep = grad_check(loss, model.parameters() + ntm.parameters(), tolerance=1e-4)
        worst = max(worst, rep.max_rel_error)
    took = time.perf_counter() - t0
    verdict(1, worst <= 1e-4 and took < 120, f"max relative error {worst:.2e} over 5 seeds, {took:.1f}s")


# 2 --------------------------------------------------------------------------------------

def test_2_flow_jacobian(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(0)
    for i in range(100):
        layers = [PlanarFlow(rng, 8, f"f{j}") for j in range(4)]
        for layer in layers:
            layer.u.data[...] = rng.normal(size=8)
            layer.w.data[...] = rng.normal(size=8)
            layer.b.data[...] = rng.normal()
        z = rng.normal(size=8)
        _, sld = apply_flow(Tensor(z[None]), layers)
        jac = numeric_jacobian(lambda v: apply_flow(Tensor(v[None]), layers)[0].data[0], z)
        worst = max(worst, abs(sld.data[0] - np.linalg.slogdet(jac)[1]))
    took = time.perf_counter() - t0
    verdict(2, worst <= 1e-6 and took < 30, f"max |analytic - numeric| log-det {worst:.2e}, {took:.1f}s")


# 3 --------------------------------------------------------------------------------------

def test_3_vae_reduction(verdict):
    flowed = FlowNTM(NtmConfig(20, n_topics=5, hidden=16, flow_length=4), np.random.default_rng(1))
    plain = FlowNTM(NtmConfig(20, n_topics=5, hidden=16, flow_length=0), np.random.default_rng(2))
    plain.load_state_dict({k: v for k, v in flowed.state_dict().items() if not k.startswith("flows.")})
    for layer in flowed.flows:
        layer.u.data[...] = 0.0
    rng = np.random.default_rng(0)
    x, noise = rng.poisson(1.0, (8, 20)).astype(float), rng.standard_normal((8, 5))
    exact = np.array_equal(flowed.forward(x, noise)[0].data, plain.forward(x, noise)[0].data)

    d = 8
    mu, ls = Tensor(np.full(d, 0.5)), Tensor(np.zeros(d))
    z0 = sample_latent(mu, ls, rng.standard_normal((10_000, d)))
    est = float(np.mean((-gaussian_log_density(z0, mu, ls) + gaussian_log_density(z0)).data))
    ok = exact and abs(est + 1.0) <= 0.02
    verdict(3, ok, f"identity flow bit-exact={exact}, Monte-Carlo -KL {est:.4f} (target -1.0 +/- 2%)")


# 4 --------------------------------------------------------------------------------------

def _matched_cosine(learned, true):
    a = learned / np.linalg.norm(learned, axis=1, keepdims=True)
    b = true / np.linalg.norm(true, axis=1, keepdims=True)
    sim = a @ b.T
    rows, cols = linear_sum_assignment(-sim)
    return sim[rows, cols]


def test_4_synthetic_topic_recovery(verdict):
    t0 = time.perf_counter()
    data = topic_corpus(n_docs=2000, n_topics=5, v_bow=100, doc_len=50, seed=0)
    cfg = TrainConfig(lr_ntm=3e-3, ntm_batch_size=16, ntm_epochs=50, seed=0)
    res = pretrain_ntm(data.counts, NtmConfig(100, n_topics=5, hidden=256, flow_length=4), cfg)
    cos = _matched_cosine(res.model.topic_word_distributions(), data.topics)
    took = time.perf_counter() - t0
    verdict(4, cos.mean() >= 0.8 and took < 600,
            f"matched cosine mean {cos.mean():.3f} (per topic {np.round(cos, 2).tolist()}), {took:.0f}s")


# 5 --------------------------------------------------------------------------------------

def test_5_overfit_and_gate_ablation(verdict, overfit_run, gate_zero_runs):
    result, examples = overfit_run
    batches = C.batches(examples, 16)
    ce = evaluate_loss(result.summarizer, result.ntm, batches)
    first = next((i + 1 for i, v in enumerate(result.train_losses) if v <= 0.1), None)
    outs = greedy_outputs(result.summarizer, result.ntm, batches, 8)
    exact = sum(o == list(e.y_ids[1:-1]) for o, e in zip(outs, examples))

    gated, plain = gate_zero_runs
    same_curve = gated.train_losses == plain.train_losses
    same_metrics = [r for r in gated.metrics if r["split"] != "train_ntm"] == plain.metrics
    plain_params = plain.summarizer.state_dict()
    same_params = all(np.array_equal(v, gated.summarizer.state_dict()[k]) for k, v in plain_params.items())
    ok = ce <= 0.1 and first is not None and exact >= 30 and same_curve and same_metrics and same_params
    verdict(5, ok, f"final CE {ce:.5f}, first batch CE<=0.1 at step {first}, exact {exact}/32, "
                   f"gate-0 == baseline: curve={same_curve} metrics={same_metrics} params={same_params}")


# 6 --------------------------------------------------------------------------------------

def test_6_grid(verdict, tmp_path, capsys):
    for name, n, seed in (("train", 40, 0), ("valid", 8, 1)):
        assert main(["synth", "--kind", "copy", "--n", str(n), "--seed", str(seed),
                     "--out", str(tmp_path / f"{name}.jsonl")]) == 0
    argv = ["grid", "--data", tmp_path / "train.jsonl", "--valid", tmp_path / "valid.jsonl",
            "--out-dir", tmp_path / "grid", "--flow-lengths", "1,4,16", "--topic-counts", "2,4",
            "--ntm-hidden", "16", "--ntm-epochs", "2", "--layers-enc", "1", "--layers-dec", "1",
            "--d-model", "16", "--heads", "2", "--ffn-dim", "32", "--max-steps", "6", "--eval-interval", "3",
            "--batch-size", "8", "--beam", "2", "--decode-max-len", "6"]
    capsys.readouterr()
    code = main([str(a) for a in argv])
    table = capsys.readouterr().out
    cells = json.loads((tmp_path / "grid" / "grid.json").read_text())
    lines = table.strip().splitlines()
    shaped = (lines[0] == "| Topic Num./Flow length | 1 | 4 | 16 |" and len(lines) == 4
              and len(cells) == 6 and {(c["topics"], c["flow_length"]) for c in cells}
              == {(t, k) for t in (2, 4) for k in (1, 4, 16)}
              and all(0 <= c[m] <= 100 for c in cells for m in ("rouge1", "rouge2", "rougeL")))
    with capsys.disabled():
        print("\n" + table)
    verdict(6, code == 0 and shaped, "flow length {1,4,16} x topics {2,4} grid written")


# 7 --------------------------------------------------------------------------------------

def test_7_rouge_oracle(verdict):
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(1000):
        a = list(rng.integers(0, 12, rng.integers(0, 25)))
        b = list(rng.integers(0, 12, rng.integers(0, 25)))
        for n in (1, 2):
            s = rouge_n(a, b, n)
            mismatches += (s.precision, s.recall, s.f1) != rouge_n_oracle(a, b, n)
        s = rouge_l(a, b)
        mismatches += (s.precision, s.recall, s.f1) != rouge_l_oracle(a, b)
    u = rouge_n("the cat sat".split(), "the cat ate".split(), 1).f1
    lcs = rouge_l("the cat sat on mat".split(), "the cat on the mat".split()).f1
    ok = mismatches == 0 and abs(u - 2 / 3) <= 1e-12 and abs(lcs - 0.8) <= 1e-12
    verdict(7, ok, f"{mismatches} mismatches on 1000 pairs; unigram F {u:.15f}, LCS F {lcs:.15f}")


# 8 --------------------------------------------------------------------------------------

def test_8_coherence(verdict):
    always = []
    for i in range(30):
        filler = [f"f{(i + j) % 13}" for j in range(8)]
        always.append(filler[:4] + ["alpha", "beta", "gamma"] + filler[4:])
    always += [[f"f{j}" for j in range(10)] for _ in range(10)]
    never = [["alpha"] + [f"f{j}" for j in range(6)] for _ in range(20)]
    never += [["beta"] + [f"f{j}" for j in range(6)] for _ in range(20)]
    hi = cv_coherence([["alpha", "beta", "gamma"]], always, method="brute").per_topic[0]
    lo = cv_coherence([["alpha", "beta"]], never, method="brute").per_topic[0]
    verdict(8, hi >= 0.99 and lo < 0.3, f"always-co-occur C_V {hi:.4f}, never-co-occur C_V {lo:.4f}")


# 9 --------------------------------------------------------------------------------------

def test_9_beam_search(verdict):
    optimal = greedy_equal = 0
    for seed in range(50):
        lm = ToyLM(seed, vocab=3)
        toks, score = beam_search(lm, eos=0, beam=8, max_len=3)
        best_score, best = enumerate_best(lm, eos=0, max_len=3)
        optimal += toks == best and abs(score - best_score) <= 1e-12
        greedy_equal += beam_search(lm, 0, 1, 3) == greedy_search(lm, 0, 3)
    verdict(9, optimal == 50 and greedy_equal == 50,
            f"beam=8 optimal on {optimal}/50 toy models, beam=1 == greedy on {greedy_equal}/50")


# 10 -------------------------------------------------------------------------------------

def test_10_end_to_end(verdict, tmp_path, capsys):
    t0 = time.perf_counter()
    mini = resources.files("topicflow.data") / "mini"
    data, valid, test = (str(mini / f"{s}.jsonl") for s in ("train", "valid", "test"))
    out = tmp_path / "run"
    small = ["--d-model", "64", "--ffn-dim", "128", "--max-steps", "300", "--eval-interval", "100",
             "--beam", "4", "--decode-max-len", "12", "--lr-joint", "1e-3"]
    steps = [
        ["build-vocab", "--data", data, "--out-dir", out],
        ["pretrain-ntm", "--data", data, "--out-dir", out, "--n-topics", "10", "--ntm-epochs", "20"],
        ["train", "--data", data, "--valid", valid, "--test", test, "--out-dir", out,
         "--ntm-checkpoint", out / "ntm.ckpt", *small],
        ["summarize", "--checkpoint", out / "model.ckpt", "--data", test, "--out", out / "summaries.jsonl",
         "--beam", "4", "--decode-max-len", "12"],
        ["eval", "--outputs", out / "summaries.jsonl", "--refs", test, "--out", out / "rouge.json"],
        ["topics", "--checkpoint", out / "model.ckpt", "--data", data, "--out", out / "topics.json"],
    ]
    codes = []
    for argv in steps:
        codes.append(main([str(a) for a in argv]))
    capsys.readouterr()
    took = time.perf_counter() - t0

    rows = [json.loads(line) for line in (out / "summaries.jsonl").read_text().splitlines()]
    rouge = json.loads((out / "rouge.json").read_text())
    topics = json.loads((out / "topics.json").read_text())
    results = json.loads((out / "results.json").read_text())
    ok = (codes == [0] * 6 and len(rows) == 20 and all(isinstance(r["summary"], str) for r in rows)
          and all(0 <= rouge[m] <= 100 for m in ("rouge1", "rouge2", "rougeL"))
          and len(topics) == 10 and all(len(t["top_words"]) == 10 for t in topics)
          and results["config"]["training"]["lambda_ntm"] == 0.75 and took < 1800)
    verdict(10, ok, f"exit codes {codes}, ROUGE {rouge['rouge1']:.2f}/{rouge['rouge2']:.2f}/"
                    f"{rouge['rougeL']:.2f}, {len(topics)} topics x 10 words, lambda 0.75, {took:.0f}s")

"""End-to-end steps shared by the command line and the grid sweep."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import corpus as C
from .config import RunConfig
from .eval.report import METRICS, aggregate
from .eval.rouge import rouge_n, rouge_l
from .io import atomic_write_text, load_checkpoint, save_checkpoint
from .ntm import FlowNTM, NtmConfig
from .numerics import no_grad
from .summarizer import Summarizer, TransformerConfig
from .training import JointResult, pretrain_ntm, stream, train_joint

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "split", "loss", "rouge1", "rouge2", "rougeL")


class MissingArgument(ValueError):
    """A path or setting the step needs was not given."""


def require(value, flag: str):
    if value is None:
        raise MissingArgument(f"--{flag.replace('_', '-')} is required")
    return value


def stopwords_for(cfg: RunConfig) -> frozenset[str]:
    if cfg.corpus.stopwords:
        return C.load_stopwords(cfg.corpus.stopwords)
    return C.default_stopwords()


def build_vocabularies(cfg: RunConfig) -> tuple[C.Vocabulary, C.BowVocabulary]:
    records = C.load_records(require(cfg.paths.data, "data"))
    vocab, bow = C.build_vocabs(records, cfg.corpus.min_count, stopwords_for(cfg),
                                cfg.corpus.bow_max_size, cfg.corpus.bow_keep_punct)
    C.save_vocabs(cfg.paths.vocab_dir or cfg.paths.out_dir, vocab, bow)
    return vocab, bow


def load_vocabularies(cfg: RunConfig) -> tuple[C.Vocabulary, C.BowVocabulary]:
    return C.load_vocabs(cfg.paths.vocab_dir or cfg.paths.out_dir, stopwords_for(cfg))


def encode_records(records, vocab, bow, cfg: RunConfig) -> list[C.EncodedExample]:
    return [C.encode(r, vocab, bow, cfg.corpus.n_max, cfg.corpus.m_max) for r in records]


def ntm_config(cfg: RunConfig, v_bow: int) -> NtmConfig:
    n = cfg.ntm
    return NtmConfig(v_bow=v_bow, n_topics=n.n_topics, d_z=n.d_z, hidden=n.ntm_hidden,
                     flow_length=n.flow_length)


def transformer_config(cfg: RunConfig, vocab_size: int) -> TransformerConfig:
    m = cfg.model
    return TransformerConfig(vocab_size=vocab_size, n_topics=cfg.ntm.n_topics, layers_enc=m.layers_enc,
                             layers_dec=m.layers_dec, d_model=m.d_model, heads=m.heads,
                             ffn_dim=m.ffn_dim, max_positions=m.max_positions, dropout=m.dropout,
                             tie_embeddings=m.tie_embeddings, use_topic=m.use_topic)


def metrics_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# topic model -----------------------------------------------------------------

def run_pretrain(cfg: RunConfig) -> tuple[FlowNTM, list[float], Path]:
    vocab, bow = load_vocabularies(cfg)
    records = C.load_records(require(cfg.paths.data, "data"))
    x_bow = np.stack([e.x_bow for e in encode_records(records, vocab, bow, cfg)])
    result = pretrain_ntm(x_bow, ntm_config(cfg, len(bow)), cfg.training)
    out = Path(cfg.paths.out or Path(cfg.paths.out_dir) / "ntm.ckpt")
    result.model.save(out, bow.itos, {"epoch_losses": result.epoch_losses})
    rows = [{"step": i + 1, "split": "train_ntm", "loss": x, "rouge1": "", "rouge2": "", "rougeL": ""}
            for i, x in enumerate(result.epoch_losses)]
    atomic_write_text(out.with_name(out.stem + "_metrics.csv"), metrics_csv(rows))
    return result.model, result.epoch_losses, out


def load_pretrained(path, bow: C.BowVocabulary) -> FlowNTM:
    model, header = FlowNTM.load(path)
    if header.get("bow_vocab") != bow.itos:
        raise ValueError(f"{path}: topic model was trained on a different BoW vocabulary")
    return model


# joint model -----------------------------------------------------------------

def rouge_from_ids(outputs: list[list[int]], examples: Sequence[C.EncodedExample], vocab) -> dict:
    """Mean F1 x 100 of decoded ids against the examples' reference ids."""
    rows = []
    for out, ex in zip(outputs, examples):
        cand = C.decode_ids(out, vocab, strip_special=True)
        ref = C.decode_ids(ex.y_ids, vocab, strip_special=True)
        rows.append({"rouge1": rouge_n(cand, ref, 1).f1, "rouge2": rouge_n(cand, ref, 2).f1,
                     "rougeL": rouge_l(cand, ref).f1})
    return aggregate(rows)


def joint_header(cfg: RunConfig, result_ntm: FlowNTM | None, model: Summarizer,
                 vocab: C.Vocabulary, bow: C.BowVocabulary, extra: dict | None = None) -> dict:
    header = {"kind": "joint", "model_config": asdict(model.config),
              "ntm_config": asdict(result_ntm.config) if result_ntm is not None else None,
              "corpus": asdict(cfg.corpus), "vocab": vocab.itos, "vocab_counts": vocab.counts,
              "bow_vocab": bow.itos, "bow_counts": bow.counts}
    header.update(extra or {})
    return header


def save_joint(path, cfg, model: Summarizer, ntm: FlowNTM | None, vocab, bow, extra=None) -> None:
    tensors = {f"summarizer.{k}": v for k, v in model.state_dict().items()}
    if ntm is not None:
        tensors.update({f"ntm.{k}": v for k, v in ntm.state_dict().items()})
    save_checkpoint(path, joint_header(cfg, ntm, model, vocab, bow, extra), tensors)


def load_joint(path) -> tuple[Summarizer, FlowNTM | None, C.Vocabulary, C.BowVocabulary, dict]:
    header, tensors = load_checkpoint(path)
    if header.get("kind") != "joint":
        raise ValueError(f"{path}: not a joint checkpoint")
    model = Summarizer(TransformerConfig(**header["model_config"]), np.random.default_rng(0))
    model.load_state_dict({k[len("summarizer."):]: v for k, v in tensors.items()
                           if k.startswith("summarizer.")})
    ntm = None
    if header.get("ntm_config"):
        ntm = FlowNTM.from_state(NtmConfig(**header["ntm_config"]), tensors)
    vocab = C.Vocabulary(header["vocab"], header.get("vocab_counts"))
    bow = C.BowVocabulary(header["bow_vocab"], header.get("bow_counts"))
    return model, ntm, vocab, bow, header


def train_model(cfg: RunConfig, train_records, valid_records, vocab, bow,
                ntm: FlowNTM | None = None) -> JointResult:
    train = encode_records(train_records, vocab, bow, cfg)
    valid = encode_records(valid_records, vocab, bow, cfg)
    return train_joint(train, valid, transformer_config(cfg, len(vocab)), cfg.training,
                       ntm=ntm, ntm_config=ntm_config(cfg, len(bow)),
                       gate_override=cfg.model.force_gate,
                       rouge_fn=lambda outs, exs: rouge_from_ids(outs, exs, vocab),
                       max_decode_len=cfg.decode.decode_max_len)


def theta_for(ntm: FlowNTM | None, x_bow: np.ndarray, mode: str, rng: np.random.Generator):
    """Document-topic mixture, at the posterior mean or from one posterior sample."""
    if ntm is None:
        return None
    if mode not in ("mean", "sample"):
        raise ValueError(f"theta mode must be mean or sample, got {mode!r}")
    x_bow = np.atleast_2d(x_bow)
    with no_grad():
        noise = ntm.noise(rng, len(x_bow)) if mode == "sample" else None
        return ntm.theta(x_bow, noise)


def summarize_records(model: Summarizer, ntm: FlowNTM | None, records, vocab, bow,
                      cfg: RunConfig) -> list[dict]:
    rng = stream(cfg.training.seed, "noise")
    rows = []
    d = cfg.decode
    for rec in records:
        ex = C.encode(rec, vocab, bow, cfg.corpus.n_max, cfg.corpus.m_max)
        theta = theta_for(ntm, ex.x_bow, cfg.ntm.theta_mode, rng)
        toks, score = model.summarize(ex.x_ids, theta, d.beam, d.decode_max_len, d.length_penalty)
        rows.append({"id": rec.id, "summary": " ".join(C.decode_ids(toks, vocab, strip_special=True)),
                     "score": float(score)})
    return rows


def test_scores(result: JointResult, cfg: RunConfig, records, vocab, bow) -> dict:
    """Test ROUGE for every retained checkpoint plus their mean and best."""
    per = []
    for ck in result.checkpoints:
        result.load(ck)
        outs = summarize_records(result.summarizer, result.ntm, records, vocab, bow, cfg)
        rows = []
        for out, rec in zip(outs, records):
            cand, ref = C.tokenize(out["summary"]), C.tokenize(rec.summary)
            rows.append({"rouge1": rouge_n(cand, ref, 1).f1, "rouge2": rouge_n(cand, ref, 2).f1,
                         "rougeL": rouge_l(cand, ref).f1})
        per.append({"step": ck.step, "val_loss": ck.val_loss, **aggregate(rows)})
    if not per:
        return {"checkpoints": [], "mean": None, "best": None}
    mean = {m: round(sum(p[m] for p in per) / len(per), 2) for m in METRICS}
    best = max(per, key=lambda p: (p["rougeL"], p["rouge1"], -p["step"]))
    return {"checkpoints": per, "mean": mean, "best": {m: best[m] for m in METRICS}}


def run_train(cfg: RunConfig) -> dict:
    vocab, bow = load_vocabularies(cfg)
    train_records = C.load_records(require(cfg.paths.data, "data"))
    valid_records = C.load_records(require(cfg.paths.valid, "valid"))
    ntm = load_pretrained(cfg.paths.ntm_checkpoint, bow) if cfg.paths.ntm_checkpoint else None
    if ntm is not None:
        if ntm.config.n_topics != cfg.ntm.n_topics:
            log.info("using the topic count %d of the pretrained topic model", ntm.config.n_topics)
            cfg.ntm.n_topics = ntm.config.n_topics
    result = train_model(cfg, train_records, valid_records, vocab, bow, ntm)
    out_dir = Path(cfg.paths.out_dir)
    atomic_write_text(out_dir / "metrics.csv", metrics_csv(result.metrics))
    summary: dict = {"config": cfg.to_dict(), "checkpoints": []}
    for rank, ck in enumerate(result.checkpoints):
        result.load(ck)
        path = out_dir / f"checkpoint-{rank + 1}.ckpt"
        save_joint(path, cfg, result.summarizer, result.ntm, vocab, bow,
                   {"step": ck.step, "val_loss": ck.val_loss, "rank": rank + 1})
        summary["checkpoints"].append({"path": str(path), "step": ck.step, "val_loss": ck.val_loss})
    if result.checkpoints:
        result.load(result.checkpoints[0])
    save_joint(out_dir / "model.ckpt", cfg, result.summarizer, result.ntm, vocab, bow,
               {"step": result.checkpoints[0].step if result.checkpoints else cfg.training.max_steps})
    if cfg.paths.test:
        scores = test_scores(result, cfg, C.load_records(cfg.paths.test), vocab, bow)
        summary["test"] = scores
        summary["test_reported"] = scores[cfg.decode.result_aggregate]
    atomic_write_text(out_dir / "results.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary

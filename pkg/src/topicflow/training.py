"""Objectives, optimizers and the two training phases (NTM pretraining, joint finetuning)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import Batch, EncodedExample, collate
from .ntm import FlowNTM, NtmConfig
from .numerics import NumericError, Parameter, Tensor, backward, functional as F, no_grad
from .summarizer import Summarizer, TransformerConfig

log = logging.getLogger(__name__)

# independent random streams, so e.g. disabling the topic model never shifts dropout draws
STREAMS = {"ntm_init": 1, "sum_init": 2, "gate_init": 3, "shuffle": 4, "noise": 5,
           "dropout": 6, "pretrain_shuffle": 7, "pretrain_noise": 8}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, STREAMS[name]]))


@dataclass
class TrainConfig:
    lambda_ntm: float = 0.75
    lr_ntm: float = 1e-3
    lr_joint: float = 1e-4
    ntm_optimizer: str = "adam"
    batch_size: int = 16
    ntm_batch_size: int = 64
    ntm_epochs: int = 50
    max_steps: int = 2000
    eval_interval: int = 100
    warmup_steps: int = 100
    clip_norm: float = 1.0
    checkpoint_top_k: int = 3
    freeze_ntm: bool = False
    eval_rouge: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lambda_ntm < 0:
            raise ValueError("lambda_ntm must be >= 0")
        if self.checkpoint_top_k < 1:
            raise ValueError("checkpoint_top_k must be >= 1")
        if self.ntm_optimizer not in ("adam", "adadelta"):
            raise ValueError("ntm_optimizer must be 'adam' or 'adadelta'")


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, last_good=None):
        super().__init__(msg)
        self.last_good = last_good


# losses -------------------------------------------------------------------

def sum_loss(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean over examples of each example's mean token NLL over unmasked targets."""
    targets = np.atleast_2d(targets)
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    counts = mask.sum(axis=1)
    if counts.sum() == 0:
        raise ValueError("sum_loss: every target position is masked")
    nll = -F.gather_last(F.log_softmax(logits), targets)
    per_tok = nll * (mask / np.maximum(counts, 1)[:, None])
    per_example = F.sum(per_tok, axis=1)
    keep = counts > 0
    if keep.all():
        return F.mean(per_example)
    return F.sum(per_example * keep) / float(keep.sum())


def joint_loss(sum_loss_value, ntm_elbo_value, lambda_ntm: float):
    """L_sum + lambda * L_NTM with L_NTM = -ELBO (a quantity to minimise)."""
    return sum_loss_value + lambda_ntm * (-ntm_elbo_value)


def batch_sum_loss(model: Summarizer, batch: Batch, theta, dropout_rng=None) -> Tensor:
    logits = model.forward(batch, theta, dropout_rng)
    return sum_loss(logits, batch.y_ids[:, 1:], batch.y_mask[:, 1:])


# optimisation ---------------------------------------------------------------

def global_norm(grads: Sequence[np.ndarray]) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_gradients(params: Sequence[Parameter], clip_norm: float) -> float:
    """Scale grads in place so their joint L2 norm is at most ``clip_norm``; returns the
    norm before clipping."""
    norm = global_norm([p.grad for p in params])
    if clip_norm > 0 and norm > clip_norm:
        scale = clip_norm / norm
        for p in params:
            p.grad = p.grad * scale
    return norm


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr_scale: float = 1.0):
        self.t += 1
        lr = self.lr * lr_scale
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class Adadelta:
    def __init__(self, params: Sequence[Parameter], lr: float = 1.0, rho: float = 0.9, eps: float = 1e-6):
        self.params = list(params)
        self.lr, self.rho, self.eps = lr, rho, eps
        self.sq = [np.zeros_like(p.data) for p in self.params]
        self.acc = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr_scale: float = 1.0):
        for p, sq, acc in zip(self.params, self.sq, self.acc):
            g = p.grad
            sq *= self.rho
            sq += (1.0 - self.rho) * g * g
            delta = np.sqrt(acc + self.eps) / np.sqrt(sq + self.eps) * g
            acc *= self.rho
            acc += (1.0 - self.rho) * delta * delta
            p.data = p.data - self.lr * lr_scale * delta

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def clip_and_step(optimizer, clip_norm: float, lr_scale: float = 1.0) -> float:
    norm = clip_gradients(optimizer.params, clip_norm)
    optimizer.step(lr_scale)
    return norm


def warmup_scale(step: int, warmup: int) -> float:
    return 1.0 if warmup <= 0 else min(1.0, step / warmup)


def _snapshot(*modules) -> list[dict]:
    return [m.state_dict() for m in modules if m is not None]


def _restore(snap, *modules):
    for m, s in zip([m for m in modules if m is not None], snap):
        m.load_state_dict(s)


# NTM pretraining ------------------------------------------------------------

@dataclass
class PretrainResult:
    model: FlowNTM
    epoch_losses: list[float]


def pretrain_ntm(x_bow: np.ndarray, ntm_config: NtmConfig, config: TrainConfig,
                 callback: Callable[[int, float], None] | None = None) -> PretrainResult:
    """Minimise the batch-mean negative ELBO; returns per-epoch mean losses."""
    x_bow = np.asarray(x_bow, dtype=np.float64)
    if x_bow.ndim != 2 or x_bow.shape[1] != ntm_config.v_bow:
        raise ValueError(f"x_bow must be (n_docs, {ntm_config.v_bow})")
    model = FlowNTM(ntm_config, stream(config.seed, "ntm_init"))
    params = model.parameters()
    if config.ntm_optimizer == "adam":
        opt = Adam(params, config.lr_ntm)
    else:
        opt = Adadelta(params, config.lr_ntm)
    shuffle = stream(config.seed, "pretrain_shuffle")
    noise_rng = stream(config.seed, "pretrain_noise")
    n = x_bow.shape[0]
    losses = []
    good = _snapshot(model)
    for epoch in range(config.ntm_epochs):
        order = shuffle.permutation(n)
        total, count = 0.0, 0
        try:
            for i in range(0, n, config.ntm_batch_size):
                xb = x_bow[order[i:i + config.ntm_batch_size]]
                opt.zero_grad()
                elbo, _, _ = model.forward(xb, model.noise(noise_rng, len(xb)))
                loss = F.mean(-elbo)
                if not math.isfinite(loss.item()):
                    raise NumericError("loss is not finite")
                backward(loss)
                clip_and_step(opt, config.clip_norm)
                total += loss.item() * len(xb)
                count += len(xb)
        except NumericError as exc:
            _restore(good, model)
            raise TrainingDiverged(f"NTM pretraining diverged in epoch {epoch + 1}: {exc}", model) from exc
        good = _snapshot(model)
        losses.append(total / count)
        log.info("pretrain epoch %d loss %.6f", epoch + 1, losses[-1])
        if callback:
            callback(epoch + 1, losses[-1])
    return PretrainResult(model, losses)


# joint training -------------------------------------------------------------

@dataclass
class Checkpoint:
    step: int
    val_loss: float
    states: list[dict]


@dataclass
class JointResult:
    summarizer: Summarizer
    ntm: FlowNTM | None
    checkpoints: list[Checkpoint]
    metrics: list[dict]
    train_losses: list[float] = field(default_factory=list)

    def load(self, ckpt: Checkpoint) -> None:
        _restore(ckpt.states, self.summarizer, self.ntm)


def _theta(ntm: FlowNTM | None, x_bow, noise=None):
    if ntm is None:
        return None
    return ntm.theta(x_bow, noise)


def evaluate_loss(model: Summarizer, ntm: FlowNTM | None, batches: Sequence[Batch]) -> float:
    """Mean per-example summarization loss in eval mode (theta at the posterior mean)."""
    was = model.training
    model.eval()
    total, n = 0.0, 0
    try:
        with no_grad():
            for b in batches:
                loss = batch_sum_loss(model, b, _theta(ntm, b.x_bow))
                total += loss.item() * len(b)
                n += len(b)
    finally:
        model.train(was)
    return total / n


def greedy_outputs(model: Summarizer, ntm: FlowNTM | None, batches: Sequence[Batch], max_len: int) -> list[list[int]]:
    out = []
    with no_grad():
        for b in batches:
            out.extend(model.greedy_batch(b, _theta(ntm, b.x_bow), max_len))
    return out


def train_joint(train: Sequence[EncodedExample], valid: Sequence[EncodedExample],
                model_config: TransformerConfig, config: TrainConfig,
                ntm: FlowNTM | None = None, ntm_config: NtmConfig | None = None,
                gate_override: float | None = None,
                rouge_fn: Callable[[list[list[int]], Sequence[EncodedExample]], dict] | None = None,
                max_decode_len: int = 64) -> JointResult:
    """Optimise L_sum + lambda * (-ELBO) end to end.

    With ``model_config.use_topic`` off the topic model is dropped entirely (the no-topic
    baseline). Validation loss is measured every ``eval_interval`` steps and after the
    last step; the ``checkpoint_top_k`` lowest-loss snapshots are retained.
    """
    if not train:
        raise ValueError("empty training set")
    model = Summarizer(model_config, stream(config.seed, "sum_init"), stream(config.seed, "gate_init"))
    model.gate_override = gate_override
    if model_config.use_topic:
        if ntm is None:
            if ntm_config is None:
                raise ValueError("topic path enabled but no topic model or NTM config given")
            ntm = FlowNTM(ntm_config, stream(config.seed, "ntm_init"))
        if ntm.config.n_topics != model_config.n_topics:
            raise ValueError("NTM topic count does not match the summarizer's gates")
    else:
        ntm = None
    sum_opt = Adam(model.parameters(), config.lr_joint)
    ntm_opt = Adam(ntm.parameters(), config.lr_joint) if ntm is not None and not config.freeze_ntm else None

    shuffle = stream(config.seed, "shuffle")
    noise_rng = stream(config.seed, "noise")
    drop_rng = stream(config.seed, "dropout")
    valid_batches = [collate(valid[i:i + config.batch_size]) for i in range(0, len(valid), config.batch_size)]

    metrics: list[dict] = []
    kept: list[Checkpoint] = []
    train_losses: list[float] = []
    order: list[int] = []
    model.train()

    def do_eval(step):
        if not valid_batches:
            return
        vloss = evaluate_loss(model, ntm, valid_batches)
        row = {"step": step, "split": "valid", "loss": vloss, "rouge1": "", "rouge2": "", "rougeL": ""}
        if config.eval_rouge and rouge_fn is not None:
            row.update(rouge_fn(greedy_outputs(model, ntm, valid_batches, max_decode_len), valid))
        metrics.append(row)
        kept.append(Checkpoint(step, vloss, _snapshot(model, ntm)))
        kept.sort(key=lambda c: (c.val_loss, c.step))
        del kept[config.checkpoint_top_k:]

    for step in range(1, config.max_steps + 1):
        if not order:
            order = list(shuffle.permutation(len(train)))
        idx, order = order[:config.batch_size], order[config.batch_size:]
        batch = collate([train[i] for i in idx])
        try:
            sum_opt.zero_grad()
            if ntm is not None:
                for p in ntm.parameters():
                    p.zero_grad()
                elbo, theta, _ = ntm.forward(batch.x_bow, ntm.noise(noise_rng, len(batch)))
                if config.freeze_ntm:
                    theta = Tensor(theta.data)
                ls = batch_sum_loss(model, batch, theta, drop_rng)
                ntm_term = F.mean(elbo)
                loss = joint_loss(ls, ntm_term, config.lambda_ntm)
            else:
                ls = batch_sum_loss(model, batch, None, drop_rng)
                ntm_term = None
                loss = ls
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(f"joint loss is not finite at step {step}",
                                       kept[0] if kept else None)
            backward(loss)
        except NumericError as exc:
            raise TrainingDiverged(f"joint training diverged at step {step}: {exc}",
                                   kept[0] if kept else None) from exc
        scale = warmup_scale(step, config.warmup_steps)
        clip_and_step(sum_opt, config.clip_norm, scale)
        if ntm_opt is not None:
            clip_and_step(ntm_opt, config.clip_norm, scale)
        train_losses.append(ls.item())
        metrics.append({"step": step, "split": "train", "loss": ls.item(),
                        "rouge1": "", "rouge2": "", "rougeL": ""})
        if ntm_term is not None:
            metrics.append({"step": step, "split": "train_ntm", "loss": -ntm_term.item(),
                            "rouge1": "", "rouge2": "", "rougeL": ""})
        if step % config.eval_interval == 0 or step == config.max_steps:
            do_eval(step)
    return JointResult(model, ntm, kept, metrics, train_losses)

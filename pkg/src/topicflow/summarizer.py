"""Topic-gated transformer encoder-decoder and beam-search decoding."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import BOS, CLS, EOS, Batch
from .nn import LayerNorm, Linear, Module
from .numerics import Parameter, Tensor, functional as F, no_grad
from .numerics.tensor import as_tensor


@dataclass
class TransformerConfig:
    vocab_size: int
    n_topics: int = 100
    layers_enc: int = 2
    layers_dec: int = 2
    d_model: int = 128
    heads: int = 4
    ffn_dim: int = 256
    max_positions: int = 512
    dropout: float = 0.1
    tie_embeddings: bool = True
    use_topic: bool = True

    def __post_init__(self):
        dims = (self.vocab_size, self.n_topics, self.layers_enc, self.layers_dec,
                self.d_model, self.heads, self.ffn_dim, self.max_positions)
        if min(dims) < 1:
            raise ValueError(f"all transformer dimensions must be >= 1: {self}")
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")


@dataclass
class EncoderStates:
    H: Tensor            # (B, N, d); row 0 is the CLS state
    mask: np.ndarray     # (B, N) bool

    @property
    def h_cls(self) -> Tensor:
        return self.H[:, 0, :]


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class MultiHeadAttention(Module):
    def __init__(self, rng, d: int, heads: int, name: str):
        self.heads = heads
        self.wq = Linear(rng, d, d, f"{name}.wq")
        self.wk = Linear(rng, d, d, f"{name}.wk")
        self.wv = Linear(rng, d, d, f"{name}.wv")
        self.wo = Linear(rng, d, d, f"{name}.wo")

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return F.transpose(F.reshape(x, (b, n, self.heads, d // self.heads)), (0, 2, 1, 3))

    def __call__(self, xq: Tensor, xkv: Tensor, mask) -> Tensor:
        b, n, d = xq.shape
        o = F.attention(self._split(self.wq(xq)), self._split(self.wk(xkv)),
                        self._split(self.wv(xkv)), mask)
        return self.wo(F.reshape(F.transpose(o, (0, 2, 1, 3)), (b, n, d)))


class FeedForward(Module):
    def __init__(self, rng, d: int, ffn: int, name: str):
        self.fc1 = Linear(rng, d, ffn, f"{name}.fc1")
        self.fc2 = Linear(rng, ffn, d, f"{name}.fc2")

    def __call__(self, x, drop):
        return self.fc2(drop(F.relu(self.fc1(x))))


class EncoderLayer(Module):
    def __init__(self, rng, c: TransformerConfig, name: str):
        self.ln1 = LayerNorm(c.d_model, f"{name}.ln1")
        self.attn = MultiHeadAttention(rng, c.d_model, c.heads, f"{name}.attn")
        self.ln2 = LayerNorm(c.d_model, f"{name}.ln2")
        self.ffn = FeedForward(rng, c.d_model, c.ffn_dim, f"{name}.ffn")

    def __call__(self, x, mask, drop):
        h = self.ln1(x)
        x = x + drop(self.attn(h, h, mask))
        return x + drop(self.ffn(self.ln2(x), drop))


class DecoderLayer(Module):
    def __init__(self, rng, c: TransformerConfig, name: str):
        self.ln1 = LayerNorm(c.d_model, f"{name}.ln1")
        self.self_attn = MultiHeadAttention(rng, c.d_model, c.heads, f"{name}.self_attn")
        self.ln2 = LayerNorm(c.d_model, f"{name}.ln2")
        self.cross_attn = MultiHeadAttention(rng, c.d_model, c.heads, f"{name}.cross_attn")
        self.ln3 = LayerNorm(c.d_model, f"{name}.ln3")
        self.ffn = FeedForward(rng, c.d_model, c.ffn_dim, f"{name}.ffn")

    def __call__(self, y, memory, self_mask, cross_mask, drop):
        h = self.ln1(y)
        y = y + drop(self.self_attn(h, h, self_mask))
        y = y + drop(self.cross_attn(self.ln2(y), memory, cross_mask))
        return y + drop(self.ffn(self.ln3(y), drop))


class TopicGates(Module):
    """Contextualized gates: lambda = sigmoid(affine(CLS states)) blends a topic-aware
    projection of [state, theta] into every hidden state."""

    def __init__(self, rng, d: int, n_topics: int):
        self.enc_gate = Linear(rng, d, d, "gate.W_E")                   # W_E, b_E
        self.dec_gate_enc = Linear(rng, d, d, "gate.W1_D", bias=False)  # W1_D
        self.dec_gate_dec = Linear(rng, d, d, "gate.W2_D")              # W2_D, b_D
        self.f_enc_topic = Linear(rng, d + n_topics, d, "gate.f_enc_topic")
        self.f_dec_topic = Linear(rng, d + n_topics, d, "gate.f_dec_topic")


def _with_topic(x: Tensor, theta: Tensor) -> Tensor:
    """concat([x, theta]) along features, theta broadcast over the sequence axis."""
    b, n, _ = x.shape
    t = theta.shape[-1]
    th = F.broadcast_to(F.reshape(theta, (theta.shape[0], 1, t)), (b, n, t))
    return F.concat([x, th], axis=-1)


def _blend(lam: Tensor, topical: Tensor, original: Tensor) -> Tensor:
    lam = F.reshape(lam, (lam.shape[0], 1, lam.shape[-1]))
    return lam * topical + (1.0 - lam) * original


class Summarizer(Module):
    """Pre-norm transformer; encoder and decoder states are modulated by ``theta``.

    ``gate_override`` pins both gate vectors to a constant (test hook for the
    ablations); ``config.use_topic = False`` removes the topic path altogether.
    """

    def __init__(self, config: TransformerConfig, rng: np.random.Generator,
                 gate_rng: np.random.Generator | None = None):
        c = config
        self.config = c
        self.embed = Parameter(rng.normal(0.0, c.d_model ** -0.5, (c.vocab_size, c.d_model)), "embed")
        self.enc_layers = [EncoderLayer(rng, c, f"enc.{i}") for i in range(c.layers_enc)]
        self.enc_ln = LayerNorm(c.d_model, "enc.ln")
        self.dec_layers = [DecoderLayer(rng, c, f"dec.{i}") for i in range(c.layers_dec)]
        self.dec_ln = LayerNorm(c.d_model, "dec.ln")
        self.out_bias = Parameter(np.zeros(c.vocab_size), "out_bias")
        self.out_proj = None if c.tie_embeddings else Linear(rng, c.d_model, c.vocab_size, "out_proj", bias=False)
        self.gates = TopicGates(gate_rng if gate_rng is not None else rng, c.d_model, c.n_topics) if c.use_topic else None
        self._pos = sinusoidal_positions(c.max_positions, c.d_model)
        self.gate_override: float | None = None

    def _dropper(self, rng):
        p = self.config.dropout
        if not self.training or rng is None or p <= 0:
            return lambda x: x
        return lambda x: F.dropout(x, p, rng)

    def _embed(self, ids: np.ndarray, drop) -> Tensor:
        n = ids.shape[1]
        if n > self.config.max_positions:
            raise ValueError(f"sequence length {n} exceeds max_positions {self.config.max_positions}")
        x = F.embedding(self.embed, ids) * math.sqrt(self.config.d_model) + self._pos[:n]
        return drop(x)

    # encoder side -------------------------------------------------------------

    def encode(self, x_ids, x_mask=None, dropout_rng=None) -> EncoderStates:
        x_ids = np.atleast_2d(np.asarray(x_ids))
        if np.any(x_ids[:, 0] != CLS):
            raise ValueError("source sequences must start with CLS")
        mask = np.ones(x_ids.shape, bool) if x_mask is None else np.atleast_2d(np.asarray(x_mask, bool))
        drop = self._dropper(dropout_rng)
        h = self._embed(x_ids, drop)
        attn_mask = mask[:, None, None, :]
        for layer in self.enc_layers:
            h = layer(h, attn_mask, drop)
        return EncoderStates(self.enc_ln(h), mask)

    def encoder_gate_lambda(self, states: EncoderStates) -> Tensor:
        if self.gate_override is not None:
            return Tensor(np.full((states.H.shape[0], self.config.d_model), float(self.gate_override)))
        return F.sigmoid(self.gates.enc_gate(states.h_cls))

    def encoder_gate(self, states: EncoderStates, theta) -> EncoderStates:
        """h'_i = lam_E * f_enc_topic([h_i, theta]) + (1 - lam_E) * h_i for every row, CLS included."""
        theta = as_tensor(theta)
        lam = self.encoder_gate_lambda(states)
        c = F.tanh(self.gates.f_enc_topic(_with_topic(states.H, theta)))
        return EncoderStates(_blend(lam, c, states.H), states.mask)

    # decoder side -------------------------------------------------------------

    def decode(self, dec_ids, states: EncoderStates, dropout_rng=None) -> Tensor:
        """Decoder states for prefixes starting with CLS; shape (B, M, d)."""
        dec_ids = np.atleast_2d(np.asarray(dec_ids))
        if np.any(dec_ids[:, 0] != CLS):
            raise ValueError("decoder input must start with CLS")
        drop = self._dropper(dropout_rng)
        m = dec_ids.shape[1]
        causal = np.tril(np.ones((m, m), bool))[None, None]
        cross = states.mask[:, None, None, :]
        y = self._embed(dec_ids, drop)
        for layer in self.dec_layers:
            y = layer(y, states.H, causal, cross, drop)
        return self.dec_ln(y)

    def decoder_gate_lambda(self, h_cls_gated: Tensor, s_cls: Tensor) -> Tensor:
        if self.gate_override is not None:
            return Tensor(np.full((s_cls.shape[0], self.config.d_model), float(self.gate_override)))
        g = self.gates
        return F.sigmoid(g.dec_gate_enc(h_cls_gated) + g.dec_gate_dec(s_cls))

    def decoder_gate(self, S: Tensor, h_cls_gated: Tensor, theta) -> Tensor:
        """s'_j = lam_D * f_dec_topic([s_j, theta]) + (1 - lam_D) * s_j, with lam_D driven by
        the gated encoder CLS state and the decoder CLS state S[:, 0]."""
        theta = as_tensor(theta)
        lam = self.decoder_gate_lambda(h_cls_gated, S[:, 0, :])
        e = F.tanh(self.gates.f_dec_topic(_with_topic(S, theta)))
        return _blend(lam, e, S)

    def project_logits(self, S: Tensor) -> Tensor:
        if self.out_proj is None:
            logits = F.matmul(S, F.transpose(self.embed))
        else:
            logits = self.out_proj(S)
        return logits + self.out_bias

    # composed forward -------------------------------------------------------

    def prepare(self, x_ids, x_mask, theta, dropout_rng=None) -> EncoderStates:
        states = self.encode(x_ids, x_mask, dropout_rng)
        if self.gates is not None:
            states = self.encoder_gate(states, theta)
        return states

    def hidden(self, dec_ids, states: EncoderStates, theta, dropout_rng=None) -> Tensor:
        S = self.decode(dec_ids, states, dropout_rng)
        if self.gates is not None:
            b = S.shape[0]
            h_cls = states.h_cls
            th = as_tensor(theta)
            if h_cls.shape[0] != b:
                h_cls = F.broadcast_to(h_cls, (b, h_cls.shape[-1]))
                th = F.broadcast_to(th, (b, th.shape[-1]))
            S = self.decoder_gate(S, h_cls, th)
        return S

    def forward(self, batch: Batch, theta, dropout_rng=None) -> Tensor:
        """Teacher-forced logits (B, M-1, V) predicting y_ids[:, 1:]."""
        states = self.prepare(batch.x_ids, batch.x_mask, theta, dropout_rng)
        dec_in = decoder_inputs(batch.y_ids)
        S = self.hidden(dec_in, states, theta, dropout_rng)
        return self.project_logits(S[:, 1:, :])

    # decoding ---------------------------------------------------------------

    def step_fn(self, states: EncoderStates, theta) -> Callable[[Sequence[tuple]], np.ndarray]:
        """Next-token log-probs for generated-token prefixes of one document."""
        def fn(prefixes):
            dec = np.array([(CLS, BOS) + tuple(p) for p in prefixes], dtype=np.int64)
            with no_grad():
                S = self.hidden(dec, states, theta)
                logits = self.project_logits(S[:, -1:, :])
                return F.log_softmax(logits).data[:, 0, :]
        return fn

    def beam_search(self, states: EncoderStates, theta, beam: int = 8, max_len: int = 64,
                    length_penalty: float = 1.0) -> tuple[list[int], float]:
        return beam_search(self.step_fn(states, theta), EOS, beam, max_len, length_penalty)

    def summarize(self, x_ids, theta, beam: int = 8, max_len: int = 64,
                  length_penalty: float = 1.0) -> tuple[list[int], float]:
        """Decode one source sequence (1-D ids starting with CLS); EOS is stripped."""
        with no_grad():
            was = self.training
            self.eval()
            try:
                states = self.prepare(np.asarray(x_ids)[None, :], None, as_tensor(theta).reshape(1, -1))
                toks, score = self.beam_search(states, as_tensor(theta).reshape(1, -1), beam, max_len, length_penalty)
            finally:
                self.train(was)
        if toks and toks[-1] == EOS:
            toks = toks[:-1]
        return toks, score

    def greedy_batch(self, batch: Batch, theta, max_len: int = 64) -> list[list[int]]:
        """Batched greedy decoding (argmax, lowest id on ties); EOS stripped."""
        with no_grad():
            was = self.training
            self.eval()
            try:
                states = self.prepare(batch.x_ids, batch.x_mask, theta)
                b = len(batch)
                gen = np.zeros((b, 0), dtype=np.int64)
                done = np.zeros(b, bool)
                for _ in range(max_len):
                    dec = np.concatenate([np.tile([[CLS, BOS]], (b, 1)), gen], axis=1)
                    S = self.hidden(dec, states, theta)
                    nxt = self.project_logits(S[:, -1:, :]).data[:, 0, :].argmax(axis=-1)
                    nxt = np.where(done, EOS, nxt)
                    gen = np.concatenate([gen, nxt[:, None]], axis=1)
                    done |= nxt == EOS
                    if done.all():
                        break
            finally:
                self.train(was)
        out = []
        for row in gen:
            row = list(row)
            out.append(row[: row.index(EOS)] if EOS in row else row)
        return out


def decoder_inputs(y_ids: np.ndarray) -> np.ndarray:
    """[CLS, y_0, ..., y_{M-2}]: the CLS-led, right-shifted teacher-forcing input."""
    y_ids = np.atleast_2d(y_ids)
    return np.concatenate([np.full((y_ids.shape[0], 1), CLS, dtype=np.int64), y_ids[:, :-1]], axis=1)


def beam_search(step_fn: Callable[[Sequence[tuple]], np.ndarray], eos: int, beam: int = 8,
                max_len: int = 64, length_penalty: float = 1.0) -> tuple[list[int], float]:
    """Beam search over ``step_fn(prefixes) -> (n, V) log-probs``.

    All expansions of the live beams are ranked by accumulated log-prob (ties: smaller
    token sequence first) and cut to ``beam``; those ending in EOS or reaching
    ``max_len`` are finished. The result maximises ``logprob / len ** length_penalty``,
    preferring the earlier-finished, then lexicographically smaller, sequence on ties.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    live: list[tuple[float, tuple]] = [(0.0, ())]
    finished: list[tuple[float, int, tuple]] = []
    for step in range(1, max_len + 1):
        if not live:
            break
        logp = np.asarray(step_fn([toks for _, toks in live]))
        cands = []
        for (base, toks), row in zip(live, logp):
            for v, lp in enumerate(row.tolist()):
                cands.append((base + lp, toks + (v,)))
        cands.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for total, toks in cands[:beam]:
            if toks[-1] == eos or step == max_len:
                finished.append((total / len(toks) ** length_penalty, step, toks))
            else:
                live.append((total, toks))
    score, _, toks = min(finished, key=lambda f: (-f[0], f[1], f[2]))
    return list(toks), score


def greedy_search(step_fn, eos: int, max_len: int = 64, length_penalty: float = 1.0) -> tuple[list[int], float]:
    total, toks = 0.0, ()
    for _ in range(max_len):
        row = np.asarray(step_fn([toks]))[0]
        v = int(np.argmax(row))
        total += row.tolist()[v]
        toks += (v,)
        if v == eos:
            break
    return list(toks), total / len(toks) ** length_penalty

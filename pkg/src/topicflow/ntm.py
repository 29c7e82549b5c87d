"""Flow-based neural topic model.

A bag-of-words vector is encoded into a diagonal Gaussian, the reparameterized sample is
pushed through a chain of planar flows, and the flowed latent is decoded into a topic
mixture ``theta`` and a word distribution whose weight matrix is the topic-word matrix.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .io import load_checkpoint, save_checkpoint
from .nn import Linear, Module
from .numerics import NumericError, Parameter, Tensor, functional as F
from .numerics.tensor import as_tensor

LOG_2PI = math.log(2.0 * math.pi)
DEGENERATE_JACOBIAN = 1e-12


@dataclass
class NtmConfig:
    v_bow: int
    n_topics: int = 100
    d_z: int | None = None
    hidden: int = 256
    flow_length: int = 4

    def __post_init__(self):
        if self.d_z is None:
            self.d_z = self.n_topics
        if self.flow_length < 0:
            raise ValueError("flow_length must be >= 0")
        if min(self.v_bow, self.n_topics, self.d_z, self.hidden) < 1:
            raise ValueError(f"all NTM dimensions must be >= 1: {self}")


@dataclass
class LatentSample:
    z0: Tensor
    zK: Tensor
    mu: Tensor
    log_sigma: Tensor
    sum_log_det: Tensor


class PlanarFlow(Module):
    """f(z) = z + u_hat * tanh(w.z + b).

    ``u_hat`` is ``u`` corrected along ``w`` so that ``u_hat.w = elu(u.w) > -1``, which
    keeps the map invertible. The correction vanishes whenever ``u.w >= 0``, in
    particular ``u = 0`` gives the exact identity.
    """

    def __init__(self, rng: np.random.Generator, dim: int, name: str = "flow"):
        self.u = Parameter(rng.normal(0.0, 0.1, dim), f"{name}.u")
        self.w = Parameter(rng.normal(0.0, 0.1, dim), f"{name}.w")
        self.b = Parameter(np.zeros(()), f"{name}.b")

    def u_hat(self) -> Tensor:
        uw = F.sum(self.u * self.w)
        ww = F.sum(self.w * self.w)
        return self.u + ((F.elu(uw) - uw) / ww) * self.w

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor]:
        u_hat = self.u_hat()
        pre = F.matmul(z, self.w) + self.b
        h = F.tanh(pre)
        z_new = z + F.reshape(h, h.shape + (1,)) * u_hat
        uw_hat = F.sum(u_hat * self.w)
        jac = 1.0 + uw_hat * (1.0 - h * h)
        return z_new, F.log_abs(jac, guard=DEGENERATE_JACOBIAN)


def apply_flow(z0: Tensor, layers: Sequence[PlanarFlow]) -> tuple[Tensor, Tensor]:
    """Apply f_1 first, f_K last; returns (z_K, sum of log|det J_i|) per row."""
    z0 = as_tensor(z0)
    z = z0
    total = Tensor(np.zeros(z0.shape[:-1]))
    for layer in layers:
        z, log_det = layer(z)
        total = total + log_det
    return z, total


def sample_latent(mu: Tensor, log_sigma: Tensor, noise) -> Tensor:
    """Reparameterized draw z0 = mu + exp(log_sigma) * noise."""
    return mu + F.exp(log_sigma) * as_tensor(noise)


def gaussian_log_density(z: Tensor, mu=None, log_sigma=None) -> Tensor:
    """Sum over the last axis of log N(z; mu, diag sigma^2); standard normal by default."""
    d = z.shape[-1]
    if mu is None:
        return -0.5 * F.sum(z * z, axis=-1) - 0.5 * d * LOG_2PI
    std = (z - mu) * F.exp(-log_sigma)
    return F.sum(-0.5 * std * std - log_sigma, axis=-1) - 0.5 * d * LOG_2PI


class FlowNTM(Module):
    def __init__(self, config: NtmConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.encoder = Linear(rng, c.v_bow, c.hidden, "encoder")
        self.mu_head = Linear(rng, c.hidden, c.d_z, "mu_head")
        self.log_sigma_head = Linear(rng, c.hidden, c.d_z, "log_sigma_head")
        self.flows = [PlanarFlow(rng, c.d_z, f"flows.{i}") for i in range(c.flow_length)]
        self.f_theta = Linear(rng, c.d_z, c.n_topics, "f_theta")
        # weight (T, V_bow) is the topic-word matrix phi
        self.f_phi = Linear(rng, c.n_topics, c.v_bow, "f_phi")

    @property
    def phi(self) -> Parameter:
        return self.f_phi.weight

    def encode_bow(self, x_bow) -> tuple[Tensor, Tensor]:
        x = as_tensor(x_bow)
        if x.shape[-1] != self.config.v_bow:
            raise ValueError(f"x_bow has dimension {x.shape[-1]}, expected {self.config.v_bow}")
        pi = F.tanh(self.encoder(x))
        return self.mu_head(pi), self.log_sigma_head(pi)

    def topic_mixture(self, zK: Tensor) -> Tensor:
        return F.softmax(F.relu(self.f_theta(zK)))

    def reconstruct_log_probs(self, theta: Tensor) -> Tensor:
        return F.log_softmax(self.f_phi(theta))

    def sample(self, x_bow, noise) -> LatentSample:
        mu, log_sigma = self.encode_bow(x_bow)
        z0 = sample_latent(mu, log_sigma, noise)
        zK, sld = apply_flow(z0, self.flows)
        return LatentSample(z0, zK, mu, log_sigma, sld)

    def elbo(self, x_bow, sample: LatentSample) -> Tensor:
        """Per-document flow-corrected ELBO (shape of the batch axes)."""
        x = as_tensor(x_bow)
        theta = self.topic_mixture(sample.zK)
        log_lik = F.sum(x * self.reconstruct_log_probs(theta), axis=-1)
        out = (-gaussian_log_density(sample.z0, sample.mu, sample.log_sigma)
               + sample.sum_log_det + log_lik + gaussian_log_density(sample.zK))
        if not np.all(np.isfinite(out.data)):
            raise NumericError("ntm_elbo: non-finite value")
        return out

    def forward(self, x_bow, noise) -> tuple[Tensor, Tensor, LatentSample]:
        """(per-document ELBO, theta, latent sample) for one reparameterized draw."""
        s = self.sample(x_bow, noise)
        return self.elbo(x_bow, s), self.topic_mixture(s.zK), s

    def theta(self, x_bow, noise=None) -> Tensor:
        """Topic mixture; ``noise=None`` uses the posterior mean (z0 = mu)."""
        mu, log_sigma = self.encode_bow(x_bow)
        z0 = mu if noise is None else sample_latent(mu, log_sigma, noise)
        zK, _ = apply_flow(z0, self.flows)
        return self.topic_mixture(zK)

    def noise(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        return rng.standard_normal((batch, self.config.d_z))

    # topics ------------------------------------------------------------------

    def top_words(self, vocab: Sequence[str], k: int) -> list[list[tuple[str, float]]]:
        """Per topic, the k words with the largest phi weight; ties go to the
        lexicographically smaller word."""
        phi = self.phi.data
        if not 1 <= k <= phi.shape[1]:
            raise ValueError(f"k must be in [1, {phi.shape[1]}]")
        if len(vocab) != phi.shape[1]:
            raise ValueError("vocabulary size does not match phi")
        lex_rank = np.argsort(np.argsort(np.array(vocab, dtype=object), kind="stable"), kind="stable")
        out = []
        for row in phi:
            order = np.lexsort((lex_rank, -row))[:k]
            out.append([(vocab[j], float(row[j])) for j in order])
        return out

    def topic_word_distributions(self) -> np.ndarray:
        """softmax(phi_t + bias): the word distribution emitted by a pure topic t."""
        logits = self.phi.data + self.f_phi.bias.data
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    # persistence -------------------------------------------------------------

    def save(self, path, bow_vocab: Sequence[str], extra: dict | None = None) -> None:
        header = {"kind": "ntm", "ntm_config": asdict(self.config), "bow_vocab": list(bow_vocab)}
        header.update(extra or {})
        save_checkpoint(path, header, {f"ntm.{n}": v for n, v in self.state_dict().items()})

    @classmethod
    def from_state(cls, config: NtmConfig, tensors: dict[str, np.ndarray], prefix: str = "ntm.") -> "FlowNTM":
        model = cls(config, np.random.default_rng(0))
        model.load_state_dict({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
        return model

    @classmethod
    def load(cls, path) -> tuple["FlowNTM", dict]:
        header, tensors = load_checkpoint(path)
        if "ntm_config" not in header:
            raise ValueError(f"{path}: checkpoint has no topic model")
        return cls.from_state(NtmConfig(**header["ntm_config"]), tensors), header


def topic_dump(model: FlowNTM, vocab: Sequence[str], k: int) -> list[dict]:
    return [{"topic_id": t, "top_words": [w for w, _ in words], "weights": [x for _, x in words]}
            for t, words in enumerate(model.top_words(vocab, k))]

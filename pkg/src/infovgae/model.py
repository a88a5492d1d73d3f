"""Relational GCN encoder, rectified-Gaussian sampling and inner-product decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Node

LOG_SIGMA_MIN = -6.0
LOG_SIGMA_MAX = 6.0


@dataclass
class ModelConfig:
    latent_dim: int = 3
    hidden_dims: list = field(default_factory=lambda: [32])
    rectified: bool = True

    def __post_init__(self):
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be non-empty")


@dataclass
class EncoderParams:
    """``layers[l][r]`` is the weight of hidden layer l for relation r.

    The first layer has ``n_features`` rows; with identity features that is N.
    """

    layers: list
    mu_heads: list
    sigma_heads: list

    def tensors(self) -> list:
        out = [w for layer in self.layers for w in layer]
        return out + list(self.mu_heads) + list(self.sigma_heads)

    def named(self) -> list:
        named = []
        for l, layer in enumerate(self.layers):
            for r, w in enumerate(layer):
                named.append((f"encoder.layer{l}.rel{r}", w))
        for r, w in enumerate(self.mu_heads):
            named.append((f"encoder.mu.rel{r}", w))
        for r, w in enumerate(self.sigma_heads):
            named.append((f"encoder.log_sigma.rel{r}", w))
        return named

    def snapshot(self) -> "EncoderParams":
        copy = lambda ws: [nx.parameter(w.value.copy(), w.name) for w in ws]
        return EncoderParams([copy(layer) for layer in self.layers],
                             copy(self.mu_heads), copy(self.sigma_heads))


def encoder_from_named(tensors: dict) -> EncoderParams:
    """Inverse of ``EncoderParams.named`` for a {name: array} mapping."""
    def collect(prefix):
        out, r = [], 0
        while f"{prefix}.rel{r}" in tensors:
            out.append(nx.parameter(tensors[f"{prefix}.rel{r}"]))
            r += 1
        return out

    layers, l = [], 0
    while f"encoder.layer{l}.rel0" in tensors:
        layers.append(collect(f"encoder.layer{l}"))
        l += 1
    mu, sigma = collect("encoder.mu"), collect("encoder.log_sigma")
    if not layers or not mu or len(mu) != len(sigma) or any(len(x) != len(mu) for x in layers):
        raise ValueError("checkpoint does not hold a complete encoder")
    return EncoderParams(layers, mu, sigma)


@dataclass
class LatentPosterior:
    mu: Node
    log_sigma: Node
    z: Node
    noise: np.ndarray


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder(n_features: int, n_relations: int, config: ModelConfig, rng) -> EncoderParams:
    dims = [n_features] + list(config.hidden_dims)
    layers = [
        [nx.parameter(glorot(rng, dims[l], dims[l + 1])) for _ in range(n_relations)]
        for l in range(len(dims) - 1)
    ]
    last = dims[-1]
    mu = [nx.parameter(glorot(rng, last, config.latent_dim)) for _ in range(n_relations)]
    sigma = [nx.parameter(glorot(rng, last, config.latent_dim)) for _ in range(n_relations)]
    return EncoderParams(layers, mu, sigma)


def _propagate(adjacency, h, weights, identity_input=False):
    """Sum over relations of Ã_r · H · W_r (H = I when ``identity_input``)."""
    total = None
    for a, w in zip(adjacency, weights):
        hw = w if identity_input else nx.matmul(h, w)
        msg = nx.spmm(a, hw)
        total = msg if total is None else nx.add(total, msg)
    return total


def encode(graph, params: EncoderParams, features=None):
    """Return (mu, log_sigma) nodes, each N×T. ``features=None`` means identity."""
    adjacency = graph.adjacency
    if len(adjacency) != len(params.mu_heads):
        raise nx.DimensionError(
            f"graph has {len(adjacency)} relations, params expect {len(params.mu_heads)}")
    n = graph.n_nodes
    if features is None:
        if params.layers[0][0].shape[0] != n:
            raise nx.DimensionError(
                f"identity features need {n} input rows, weights have {params.layers[0][0].shape[0]}")
        h = nx.relu(_propagate(adjacency, None, params.layers[0], identity_input=True))
    else:
        x = features if isinstance(features, Node) else nx.constant(features)
        if x.shape[0] != n:
            raise nx.DimensionError(f"features have {x.shape[0]} rows, graph has {n} nodes")
        h = nx.relu(_propagate(adjacency, x, params.layers[0]))
    for layer in params.layers[1:]:
        h = nx.relu(_propagate(adjacency, h, layer))
    mu = _propagate(adjacency, h, params.mu_heads)
    log_sigma = _propagate(adjacency, h, params.sigma_heads)
    return mu, log_sigma


def draw_noise(shape, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal(shape)


def sample_latent(mu: Node, log_sigma: Node, seed=None, rectified=True, noise=None) -> LatentPosterior:
    """Reparameterized draw z = mu + exp(log_sigma) * eps, rectified if requested.

    ``log_sigma`` is clamped to [-6, 6] first. Pass ``noise`` to reuse a draw.
    """
    if mu.shape != log_sigma.shape:
        raise nx.DimensionError(f"mu {mu.shape} vs log_sigma {log_sigma.shape}")
    if noise is None:
        noise = draw_noise(mu.shape, seed)
    log_sigma = nx.clip(log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    z = nx.add(mu, nx.mul(nx.exp(log_sigma), noise))
    if rectified:
        z = nx.max0(z)
    return LatentPosterior(mu=mu, log_sigma=log_sigma, z=z, noise=noise)


def decode_all(z) -> Node:
    """Edge probabilities sigmoid(Z Zᵀ) for every node pair."""
    z = z if isinstance(z, Node) else nx.constant(z)
    return nx.sigmoid(nx.gram(z))


def positive_weight(n_nodes: int, n_positive: int) -> float:
    total = n_nodes * n_nodes
    return (total - n_positive) / max(n_positive, 1)


@dataclass
class ReconTarget:
    """Per-graph constants for the weighted binary cross-entropy.

    For binary t, t·log p + (1 - t)·log(1 - p) = log(sign·p + offset) with
    sign = 2t - 1 and offset = 1 - t; ``weight`` folds in the positive weight.
    """

    sign: np.ndarray
    offset: np.ndarray
    weight: np.ndarray
    signed_weight: np.ndarray

    @classmethod
    def build(cls, target, pos_weight: float) -> "ReconTarget":
        t = target.toarray() if hasattr(target, "toarray") else np.asarray(target, dtype=np.float64)
        if not np.all((t == 0.0) | (t == 1.0)):
            raise ValueError("reconstruction target must be binary")
        sign = 2.0 * t - 1.0
        weight = pos_weight * t + (1.0 - t)
        return cls(sign=sign, offset=1.0 - t, weight=weight, signed_weight=weight * sign)


def reconstruction_loss(p: Node, target, pos_weight: float | None = None, norm: float = 1.0) -> Node:
    """-norm * mean[pos_weight·t·log p + (1 - t)·log(1 - p)] over all pairs.

    ``target`` is a binary matrix (with ``pos_weight``) or a prepared ReconTarget.
    """
    if not isinstance(target, ReconTarget):
        target = ReconTarget.build(target, pos_weight)
    if target.sign.shape != p.shape:
        raise nx.DimensionError(f"target {target.sign.shape} vs probabilities {p.shape}")
    likelihood = nx.add(nx.mul(p, target.sign), target.offset)
    return nx.scalar_mul(nx.mean_all(nx.mul(nx.log(likelihood), target.weight)), -norm)


def reconstruction_loss_logits(z: Node, target: ReconTarget) -> Node:
    """reconstruction_loss(decode_all(z), target) fused into one primitive.

    Used by the trainer; agrees with the composed form to rounding error.
    """
    return nx.weighted_bce_logits(nx.gram(z), target.sign, target.weight, target.signed_weight)


def kl_divergence(mu: Node, log_sigma: Node) -> Node:
    """Per-node mean KL of N(mu, sigma²) from N(0, I), summed over latent dims."""
    n = mu.shape[0]
    sigma_sq = nx.exp(nx.scalar_mul(log_sigma, 2.0))
    terms = nx.add(
        nx.add(nx.mul(mu, mu), sigma_sq),
        nx.add(nx.scalar_mul(log_sigma, -2.0), np.full(mu.shape, -1.0)),
    )
    return nx.scalar_mul(nx.sum_all(terms), 0.5 / n)

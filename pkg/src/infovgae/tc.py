"""Total-correlation penalty estimated by a density-ratio discriminator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .model import glorot
from .numerics import Node

LEAKY_SLOPE = 0.2


@dataclass
class DiscriminatorParams:
    w1: Node
    b1: Node
    w2: Node
    b2: Node

    def tensors(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]

    def named(self) -> list:
        return [("disc.w1", self.w1), ("disc.b1", self.b1),
                ("disc.w2", self.w2), ("disc.b2", self.b2)]


def discriminator_from_named(tensors: dict) -> DiscriminatorParams:
    try:
        return DiscriminatorParams(*(nx.parameter(tensors[f"disc.{k}"])
                                     for k in ("w1", "b1", "w2", "b2")))
    except KeyError as exc:
        raise ValueError(f"checkpoint lacks discriminator tensor {exc}") from None


@dataclass
class TcBatch:
    joint: np.ndarray
    shuffled: np.ndarray


def init_discriminator(latent_dim: int, hidden: int, rng) -> DiscriminatorParams:
    return DiscriminatorParams(
        w1=nx.parameter(glorot(rng, latent_dim, hidden)),
        b1=nx.parameter(np.zeros((1, hidden))),
        w2=nx.parameter(glorot(rng, hidden, 1)),
        b2=nx.parameter(np.zeros((1, 1))),
    )


def make_tc_batch(z, seed) -> TcBatch:
    """Pair the joint samples with a copy whose columns are permuted independently."""
    z = np.array(z.value if isinstance(z, Node) else z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("a TC batch needs at least 2 rows")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shuffled = np.empty_like(z)
    for k in range(z.shape[1]):
        shuffled[:, k] = z[rng.permutation(z.shape[0]), k]
    return TcBatch(joint=z, shuffled=shuffled)


def discriminator_logit(z, d: DiscriminatorParams, frozen: bool = False) -> Node:
    """Raw logits (B×1). ``frozen`` treats the discriminator weights as constants."""
    params = [nx.constant(p.value) if frozen else p for p in d.tensors()]
    w1, b1, w2, b2 = params
    z = z if isinstance(z, Node) else nx.constant(z)
    if z.shape[1] != w1.shape[0]:
        raise nx.DimensionError(f"discriminator expects {w1.shape[0]} columns, got {z.shape[1]}")
    h = nx.leaky_relu(nx.add_row(nx.matmul(z, w1), b1), LEAKY_SLOPE)
    return nx.add_row(nx.matmul(h, w2), b2)


def tc_penalty(z, d: DiscriminatorParams) -> Node:
    # log Φ - log(1 - Φ) is the logit itself
    return nx.mean_all(discriminator_logit(z, d, frozen=True))


def discriminator_loss(batch: TcBatch, d: DiscriminatorParams) -> Node:
    """Balanced BCE: joint rows labelled 1, shuffled rows labelled 0."""
    p_joint = nx.sigmoid(discriminator_logit(nx.constant(batch.joint), d))
    p_shuf = nx.sigmoid(discriminator_logit(nx.constant(batch.shuffled), d))
    log_joint = nx.mean_all(nx.log(p_joint))
    log_indep = nx.mean_all(nx.log(nx.add(nx.scalar_mul(p_shuf, -1.0), np.ones(p_shuf.shape))))
    return nx.scalar_mul(nx.add(log_joint, log_indep), -0.5)

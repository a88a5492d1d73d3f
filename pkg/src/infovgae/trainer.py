"""Joint training loop: VAE step, discriminator step, PI update."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .controller import PIController
from .graph import NormalizedGraph, normalize_unipartite, projection_graphs
from .model import (
    EncoderParams, ModelConfig, decode_all, encode, init_encoder, kl_divergence,
    ReconTarget, positive_weight, reconstruction_loss, reconstruction_loss_logits,
    sample_latent,
)
from .tc import (
    DiscriminatorParams, discriminator_loss, init_discriminator, make_tc_batch, tc_penalty,
)

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "recon", "kl", "beta", "tc", "disc", "wall_ms")


class TrainingAborted(nx.NumericError):
    def __init__(self, step, terms):
        self.step = step
        self.terms = terms
        detail = ", ".join(f"{k}={v!r}" for k, v in terms.items())
        super().__init__(f"non-finite loss at step {step}: {detail}")


@dataclass
class TrainConfig:
    epochs: int = 500
    seed: int = 0
    lr_vae: float = 0.01
    lr_disc: float = 0.001
    lambda_tc: float = 0.01
    kp: float = 0.01
    ki: float = 0.001
    kl_set: float = 1.0
    beta_min: float = 0.0
    beta_max: float = 1.0
    beta_init: float = 0.0
    kl_ema: float = 0.9
    disc_hidden: int = 64
    no_tc: bool = False
    no_pi: bool = False
    gaussian: bool = False
    separate: bool = False
    log_every: int = 1
    patience: int | None = None  # early stopping off unless set
    min_improvement: float = 1e-5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lambda_tc < 0:
            raise ValueError("lambda_tc must be >= 0")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)
    kl_ema: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        i = TRACE_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=np.float64)

    def deterministic_rows(self) -> list:
        return [r[:-1] for r in self.rows]

    def to_csv(self, path) -> None:
        lines = [",".join(TRACE_COLUMNS)]
        for r in self.rows:
            lines.append(",".join([str(r[0])] + [repr(float(v)) for v in r[1:]]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass
class TrainResult:
    encoder: EncoderParams
    discriminator: DiscriminatorParams
    trace: TrainTrace
    model_config: ModelConfig
    train_config: TrainConfig

    @property
    def rectified(self) -> bool:
        return self.model_config.rectified and not self.train_config.gaussian


def _streams(seed):
    init, noise, perm = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(noise),
            np.random.default_rng(perm))


def recon_target(graph) -> ReconTarget:
    return ReconTarget.build(graph.target, positive_weight(graph.n_nodes, graph.n_positive))


def vae_loss(graph, encoder, noise, rectified, beta, lambda_tc, disc, target=None):
    """Build the joint objective for fixed noise; returns (loss, parts, posterior)."""
    if target is None:
        target = recon_target(graph)
    mu, log_sigma = encode(graph, encoder)
    post = sample_latent(mu, log_sigma, rectified=rectified, noise=noise)
    recon = reconstruction_loss_logits(post.z, target)
    kl = kl_divergence(post.mu, post.log_sigma)
    loss = nx.add(recon, nx.scalar_mul(kl, beta))
    tc = None
    if disc is not None and lambda_tc > 0:
        tc = tc_penalty(post.z, disc)
        loss = nx.add(loss, nx.scalar_mul(tc, lambda_tc))
    return loss, {"recon": recon, "kl": kl, "tc": tc}, post


def train(graph: NormalizedGraph, config: TrainConfig | None = None,
          model_config: ModelConfig | None = None) -> TrainResult:
    config = config or TrainConfig()
    model_config = model_config or ModelConfig()
    rectified = model_config.rectified and not config.gaussian
    init_rng, noise_rng, perm_rng = _streams(config.seed)

    encoder = init_encoder(graph.n_nodes, graph.n_relations, model_config, init_rng)
    disc = init_discriminator(model_config.latent_dim, config.disc_hidden, init_rng)
    opt_vae = nx.Adam(lr=config.lr_vae)
    opt_disc = nx.Adam(lr=config.lr_disc)
    controller = None if config.no_pi else PIController(
        kp=config.kp, ki=config.ki, kl_set=config.kl_set,
        beta_min=config.beta_min, beta_max=config.beta_max, beta=config.beta_init)
    beta = 1.0 if controller is None else controller.beta

    target = recon_target(graph)
    shape = (graph.n_nodes, model_config.latent_dim)
    trace = TrainTrace()
    ema = None
    best, best_step = np.inf, 0

    for step in range(config.epochs):
        t0 = time.perf_counter()
        noise = noise_rng.standard_normal(shape)
        use_tc = not config.no_tc
        loss, parts, post = vae_loss(
            graph, encoder, noise, rectified, beta,
            config.lambda_tc if use_tc else 0.0, disc if use_tc else None, target)
        terms = {
            "recon": float(parts["recon"].value[0, 0]),
            "kl": float(parts["kl"].value[0, 0]),
            "beta": beta,
            "tc": float(parts["tc"].value[0, 0]) if parts["tc"] is not None else 0.0,
        }
        if not np.isfinite(loss.value).all() or not all(np.isfinite(v) for v in terms.values()):
            raise TrainingAborted(step, terms)
        nx.backward(loss)
        opt_vae.step(encoder.tensors())

        disc_value = 0.0
        if use_tc:
            batch = make_tc_batch(post.z.value, perm_rng)
            d_loss = discriminator_loss(batch, disc)
            disc_value = float(d_loss.value[0, 0])
            if not np.isfinite(disc_value):
                raise TrainingAborted(step, dict(terms, disc=disc_value))
            nx.backward(d_loss)
            opt_disc.step(disc.tensors())

        kl = terms["kl"]
        ema = kl if ema is None else config.kl_ema * ema + (1.0 - config.kl_ema) * kl
        trace.kl_ema.append(ema)
        if controller is not None:
            beta = controller.update(ema)

        wall_ms = (time.perf_counter() - t0) * 1000.0
        if step % config.log_every == 0 or step == config.epochs - 1:
            trace.rows.append((step, terms["recon"], kl, terms["beta"], terms["tc"],
                               disc_value, wall_ms))
        if step % 50 == 0:
            log.debug("step %d recon %.4f kl %.4f beta %.4g tc %.4f", step,
                      terms["recon"], kl, terms["beta"], terms["tc"])

        if terms["recon"] < best - config.min_improvement:
            best, best_step = terms["recon"], step
        elif config.patience is not None and step - best_step >= config.patience:
            log.info("early stop at step %d", step)
            break

    return TrainResult(encoder, disc, trace, model_config, config)


def embed(graph, encoder: EncoderParams, mode="mean", seed=0, rectified=True) -> np.ndarray:
    """Latent coordinates per node: rectified mean, or one rectified draw."""
    mu, log_sigma = encode(graph, encoder)
    if mode == "mean":
        return np.maximum(mu.value, 0.0) if rectified else mu.value.copy()
    if mode == "sample":
        return sample_latent(mu, log_sigma, seed=seed, rectified=rectified).z.value.copy()
    raise ValueError(f"unknown embedding mode {mode!r}")


def mean_reconstruction(graph, encoder: EncoderParams, rectified=True) -> float:
    """Noise-free reconstruction loss at the (rectified) posterior mean."""
    z = embed(graph, encoder, rectified=rectified)
    return float(reconstruction_loss(decode_all(z), recon_target(graph)).value[0, 0])


def initial_encoder(graph: NormalizedGraph, config: TrainConfig, model_config=None) -> EncoderParams:
    """The encoder ``train`` starts from for this seed."""
    init_rng, _, _ = _streams(config.seed)
    return init_encoder(graph.n_nodes, graph.n_relations, model_config or ModelConfig(), init_rng)


def train_separate(graph: NormalizedGraph, config=None, model_config=None):
    """Separate-learning ablation: one model per projection graph.

    Returns (user_embedding, claim_embedding, (user_result, claim_result)).
    """
    config = config or TrainConfig()
    user_g, claim_g = projection_graphs(graph.bhin)
    out = []
    for g in (user_g, claim_g):
        ng = normalize_unipartite(g)
        res = train(ng, config, model_config)
        out.append((embed(ng, res.encoder, rectified=res.rectified), res))
    return out[0][0], out[1][0], (out[0][1], out[1][1])


def config_dict(config) -> dict:
    return asdict(config)

"""Vanilla GAN imputer baseline.

The generator maps a single noise channel to a learner image; the discriminator
scores single-channel images as real (observed cells, missing cells filled with
the observed mean) or generated. Imputation merges the generator's image for
each learner into that learner's observed cells.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import neural
from .gain import LOG_EPS, _check, make_noise, reconstruction_rmse, reconstruction_rmse_grad
from .neural import AdamState, NetParams, NetSpec
from .tensor import PerfTensor, merge_imputed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GanConfig:
    noise_scale: float = 0.01
    recon_weight: float = 10.0
    learning_rate: float = 1e-3
    max_iterations: int = 100
    early_stop_rmse: float = 0.1
    d_steps_per_g_step: int = 1
    batch_size: int = 64
    seed: int = 0
    channels: tuple[int, ...] = (16, 32, 32, 32, 16)
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.noise_scale <= 0 or self.recon_weight <= 0 or self.learning_rate <= 0:
            raise ValueError("noise_scale, recon_weight and learning_rate must be positive")
        if self.max_iterations < 1 or self.d_steps_per_g_step < 1 or self.batch_size < 1:
            raise ValueError("max_iterations, d_steps_per_g_step and batch_size must be positive")
        if not self.early_stop_rmse > 0:
            raise ValueError("early_stop_rmse must be positive")


@dataclass(eq=False)
class GanModel:
    generator: tuple[NetSpec, NetParams]
    discriminator: tuple[NetSpec, NetParams]
    config: GanConfig
    training_curve: list[tuple[int, float]] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.generator[0].output_shape


def build_model(shape, cfg: GanConfig) -> GanModel:
    ss = np.random.SeedSequence(cfg.seed).spawn(2)
    gspec = NetSpec.conv_stack(1, shape, cfg.channels, dropout_rate=cfg.dropout_rate)
    dspec = NetSpec.conv_stack(1, shape, cfg.channels, dropout_rate=cfg.dropout_rate)
    return GanModel((gspec, neural.init_params(gspec, ss[0])), (dspec, neural.init_params(dspec, ss[1])), cfg)


def learner_noise(cfg: GanConfig, U: int, shape) -> np.ndarray:
    """One noise image per learner, seeded by (config seed, learner index)."""
    return np.stack([make_noise((1, *shape), cfg.noise_scale, np.random.SeedSequence([cfg.seed, 0x9A, u])) for u in range(U)])


def _bce_grad(d_out, target):
    d = np.clip(d_out, LOG_EPS, 1 - LOG_EPS)
    inside = (d_out > LOG_EPS) & (d_out < 1 - LOG_EPS)
    return -(target / d - (1 - target) / (1 - d)) * inside / d_out.size


def _bce(d_out, target):
    d = np.clip(d_out, LOG_EPS, 1 - LOG_EPS)
    return float(-np.mean(target * np.log(d) + (1 - target) * np.log(1 - d)))


def _train_batch(model, gstate, dstate, values, mask, fill, rng, iteration):
    cfg = model.config
    gspec, gparams = model.generator
    dspec, dparams = model.discriminator
    if mask.sum() == 0:
        log.warning("iteration %d: batch without observed entries skipped", iteration)
        return gparams, dparams, gstate, dstate
    B = len(values)
    real = np.where(mask > 0, np.nan_to_num(values), fill)[:, None]
    z = make_noise((B, 1, *gspec.output_shape), cfg.noise_scale, rng)
    gen, gtape = neural.forward(gspec, gparams, z, "train", rng)
    ones, zeros = np.ones_like(gen), np.zeros_like(gen)
    for _ in range(cfg.d_steps_per_g_step):
        batch = np.concatenate([real, gen[:, None]])
        target = np.concatenate([ones, zeros])
        d_out, dtape = neural.forward(dspec, dparams, batch, "train", rng)
        _check(_bce(d_out, target), "discriminator", iteration)
        dgrads, _ = neural.backward(dtape, _bce_grad(d_out, target))
        dparams, dstate = neural.adam_step(dparams, dgrads, dstate)
        dparams = dparams.with_stats(dtape.new_stats)

    d_out, dtape = neural.forward(dspec, dparams, gen[:, None], "train", rng)
    loss = _bce(d_out, ones) + cfg.recon_weight * reconstruction_rmse(gen, values, mask)
    _check(loss, "generator", iteration)
    _, d_in = neural.backward(dtape, _bce_grad(d_out, ones))
    grad_gen = d_in[:, 0] + cfg.recon_weight * reconstruction_rmse_grad(gen, values, mask)
    ggrads, _ = neural.backward(gtape, grad_gen)
    gparams, gstate = neural.adam_step(gparams, ggrads, gstate)
    return gparams.with_stats(gtape.new_stats), dparams, gstate, dstate


def generate(model: GanModel, U: int) -> np.ndarray:
    spec, params = model.generator
    out, _ = neural.forward(spec, params, learner_noise(model.config, U, spec.output_shape), "infer")
    return out


def gan_train(t: PerfTensor, cfg: GanConfig | None = None) -> GanModel:
    cfg = cfg or GanConfig()
    if t.n_observed == 0:
        raise ValueError("tensor has no observed cells")
    model = build_model(t.shape[1:], cfg)
    gstate = AdamState.create(model.generator[1], cfg.learning_rate)
    dstate = AdamState.create(model.discriminator[1], cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x6A2]))
    U = t.shape[0]
    bs = min(U, cfg.batch_size)
    mask = t.mask
    fill = float(np.nanmean(t.values))
    for it in range(1, cfg.max_iterations + 1):
        order = rng.permutation(U)
        for start in range(0, U, bs):
            idx = order[start:start + bs]
            gp, dp, gstate, dstate = _train_batch(model, gstate, dstate, t.values[idx], mask[idx], fill, rng, it)
            model.generator = (model.generator[0], gp)
            model.discriminator = (model.discriminator[0], dp)
        r = reconstruction_rmse(generate(model, U), t.values, mask)
        _check(r, "reconstruction", it)
        model.training_curve.append((it, r))
        if r <= cfg.early_stop_rmse:
            break
    return model


def gan_impute(model: GanModel, t: PerfTensor) -> np.ndarray:
    if t.shape[1:] != tuple(model.shape):
        raise ValueError(f"tensor shape {t.shape} does not match model {model.shape}")
    return merge_imputed(t.values, generate(model, t.shape[0]), t.mask)


def save_model(path, model: GanModel) -> None:
    arrays = {}
    for tag, (_, p) in (("G", model.generator), ("D", model.discriminator)):
        arrays.update({f"{tag}/w/{k}": v for k, v in p.weights.items()})
        arrays.update({f"{tag}/s/{k}": v for k, v in p.stats.items()})
    meta = {"kind": "gan", "config": asdict(model.config), "shape": list(model.shape), "curve": model.training_curve}
    neural.save_arrays(path, arrays, meta)


def load_model(path) -> GanModel:
    arrays, meta = neural.load_arrays(path)
    model = build_model(tuple(meta["shape"]), GanConfig(**meta["config"]))
    model.generator = (model.generator[0], neural.split_params(arrays, "G/"))
    model.discriminator = (model.discriminator[0], neural.split_params(arrays, "D/"))
    model.training_curve = [(int(i), float(r)) for i, r in meta["curve"]]
    return model

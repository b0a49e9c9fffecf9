"""GAIN imputer on learner images.

The generator sees three channels per learner: observed values with missing
cells filled by noise, the mask, and the noise restricted to missing cells.
The discriminator sees the merged (imputed) image and a hint matrix and
predicts, per cell, whether it was observed.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import neural
from .neural import AdamState, NetParams, NetSpec, NonFiniteError
from .tensor import PerfTensor, merge_imputed

log = logging.getLogger(__name__)

LOG_EPS = 1e-7


@dataclass(frozen=True)
class GainConfig:
    hint_rate: float = 0.9
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
    recon_holdout: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        self.validate()

    def validate(self):
        if not 0 < self.hint_rate <= 1:
            raise ValueError("hint_rate must lie in (0, 1]")
        if self.noise_scale <= 0 or self.recon_weight <= 0 or self.learning_rate <= 0:
            raise ValueError("noise_scale, recon_weight and learning_rate must be positive")
        if self.max_iterations < 1 or self.d_steps_per_g_step < 1 or self.batch_size < 1:
            raise ValueError("max_iterations, d_steps_per_g_step and batch_size must be positive")
        if not 0 <= self.recon_holdout < 1:
            raise ValueError("recon_holdout must lie in [0, 1)")
        if not self.early_stop_rmse > 0:
            raise ValueError("early_stop_rmse must be positive")


def make_noise(dims, scale: float, seed) -> np.ndarray:
    """Uniform noise on [0, scale] of shape `dims`; `seed` may be a Generator."""
    if scale <= 0:
        raise ValueError("noise scale must be positive")
    return np.random.default_rng(seed).uniform(0.0, scale, size=dims)


def make_hint(mask: np.ndarray, hint_rate: float, seed) -> np.ndarray:
    """Reveal each mask bit with probability `hint_rate`; unrevealed entries are 0.5."""
    if not 0 < hint_rate <= 1:
        raise ValueError("hint_rate must lie in (0, 1]")
    mask = np.asarray(mask, dtype=float)
    b = (np.random.default_rng(seed).random(mask.shape) < hint_rate).astype(float)
    return b * mask + 0.5 * (1.0 - b)


def discriminator_loss(d_out: np.ndarray, mask: np.ndarray) -> float:
    d = np.clip(d_out, LOG_EPS, 1 - LOG_EPS)
    return float(-np.mean(mask * np.log(d) + (1 - mask) * np.log(1 - d)))


def discriminator_loss_grad(d_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    d = np.clip(d_out, LOG_EPS, 1 - LOG_EPS)
    inside = (d_out > LOG_EPS) & (d_out < 1 - LOG_EPS)
    return -(mask / d - (1 - mask) / (1 - d)) * inside / d_out.size


def reconstruction_rmse(generated: np.ndarray, observed: np.ndarray, mask: np.ndarray) -> float:
    n = mask.sum()
    if n == 0:
        raise ValueError("no observed entries")
    diff = np.where(mask > 0, generated - np.nan_to_num(observed), 0.0)
    return float(np.sqrt((diff ** 2).sum() / n))


def reconstruction_rmse_grad(generated, observed, mask) -> np.ndarray:
    n = mask.sum()
    diff = np.where(mask > 0, generated - np.nan_to_num(observed), 0.0)
    r = np.sqrt((diff ** 2).sum() / n)
    if r < 1e-8:
        return 2.0 * diff / n
    return diff / (n * r)


def generator_loss(d_out, mask, generated, observed, recon_weight: float = 10.0, recon_mask=None) -> float:
    """Adversarial term on missing cells plus weighted observed-cell RMSE.

    `recon_mask` selects the cells scored by the RMSE term and defaults to `mask`.
    """
    mask = np.asarray(mask, dtype=float)
    recon_mask = mask if recon_mask is None else np.asarray(recon_mask, dtype=float)
    miss = 1 - mask
    adv = 0.0
    if miss.sum() > 0:
        adv = float(-(miss * np.log(np.clip(d_out, LOG_EPS, 1 - LOG_EPS))).sum() / miss.sum())
    return adv + recon_weight * reconstruction_rmse(generated, observed, recon_mask)


def _generator_adv_grad(d_out, mask):
    miss = 1 - mask
    n = miss.sum()
    if n == 0:
        return np.zeros_like(d_out)
    d = np.clip(d_out, LOG_EPS, 1 - LOG_EPS)
    inside = (d_out > LOG_EPS) & (d_out < 1 - LOG_EPS)
    return -miss / d * inside / n


@dataclass(eq=False)
class GainModel:
    generator: tuple[NetSpec, NetParams]
    discriminator: tuple[NetSpec, NetParams]
    config: GainConfig
    training_curve: list[tuple[int, float]] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.generator[0].output_shape


def build_model(shape: tuple[int, int], cfg: GainConfig) -> GainModel:
    ss = np.random.SeedSequence(cfg.seed).spawn(2)
    gspec = NetSpec.conv_stack(3, shape, cfg.channels, dropout_rate=cfg.dropout_rate)
    dspec = NetSpec.conv_stack(2, shape, cfg.channels, dropout_rate=cfg.dropout_rate)
    return GainModel(
        (gspec, neural.init_params(gspec, ss[0])),
        (dspec, neural.init_params(dspec, ss[1])),
        cfg,
    )


def _as_batch(matrices) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(matrices, np.ndarray):
        values = matrices if matrices.ndim == 3 else matrices[None]
        return values, (~np.isnan(values)).astype(float)
    values = np.stack([m.values for m in matrices])
    return values, np.stack([m.mask for m in matrices]).astype(float)


def generator_input(values: np.ndarray, mask: np.ndarray, noise: np.ndarray) -> np.ndarray:
    filled = np.where(mask > 0, np.nan_to_num(values), noise)
    return np.stack([filled, mask, (1 - mask) * noise], axis=1)


def generator_forward(model: GainModel, matrices, seed=None, mode="infer", rng=None):
    """Generated images for a batch of learner matrices (or a (B,N,M) array with NaNs).

    Returns ``(generated, tape)``.
    """
    values, mask = _as_batch(matrices)
    spec, params = model.generator
    if values.shape[1:] != tuple(spec.output_shape):
        raise ValueError(f"learner matrices of shape {values.shape[1:]} do not match model {spec.output_shape}")
    noise = make_noise(values.shape, model.config.noise_scale, seed)
    return neural.forward(spec, params, generator_input(values, mask, noise), mode, rng)


def _check(loss, what, iteration):
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite {what} loss at iteration {iteration}", iteration=iteration)


def _train_batch(model, gstate, dstate, values, mask, rng, iteration):
    cfg = model.config
    gspec, gparams = model.generator
    dspec, dparams = model.discriminator
    if mask.sum() == 0:
        log.warning("iteration %d: batch without observed entries skipped", iteration)
        return gparams, dparams, gstate, dstate
    noise = make_noise(values.shape, cfg.noise_scale, rng)
    x_obs = np.nan_to_num(values)
    # cells hidden from the generator but still scored by the reconstruction term
    seen = mask * (rng.random(mask.shape) >= cfg.recon_holdout) if cfg.recon_holdout > 0 else mask
    gin = generator_input(np.where(seen > 0, values, np.nan), seen, noise)

    gen, gtape = neural.forward(gspec, gparams, gin, "train", rng)
    imputed = seen * x_obs + (1 - seen) * gen
    for _ in range(cfg.d_steps_per_g_step):
        hint = make_hint(seen, cfg.hint_rate, rng)
        d_out, dtape = neural.forward(dspec, dparams, np.stack([imputed, hint], axis=1), "train", rng)
        _check(discriminator_loss(d_out, seen), "discriminator", iteration)
        dgrads, _ = neural.backward(dtape, discriminator_loss_grad(d_out, seen))
        dparams, dstate = neural.adam_step(dparams, dgrads, dstate)
        dparams = dparams.with_stats(dtape.new_stats)

    hint = make_hint(seen, cfg.hint_rate, rng)
    d_out, dtape = neural.forward(dspec, dparams, np.stack([imputed, hint], axis=1), "train", rng)
    _check(generator_loss(d_out, seen, gen, values, cfg.recon_weight, mask), "generator", iteration)
    _, d_in = neural.backward(dtape, _generator_adv_grad(d_out, seen))
    grad_gen = (1 - seen) * d_in[:, 0] + cfg.recon_weight * reconstruction_rmse_grad(gen, values, mask)
    ggrads, _ = neural.backward(gtape, grad_gen)
    gparams, gstate = neural.adam_step(gparams, ggrads, gstate)
    gparams = gparams.with_stats(gtape.new_stats)
    return gparams, dparams, gstate, dstate


def observed_rmse(model: GainModel, t: PerfTensor) -> float:
    """Observed-cell reconstruction RMSE of the generator in infer mode."""
    gen, _ = generator_forward(model, t.values, seed=_eval_seed(model.config))
    return reconstruction_rmse(gen, t.values, t.mask)


def _eval_seed(cfg) -> int:
    return int(np.random.SeedSequence([cfg.seed, 0xE7A1]).generate_state(1)[0])


def train(t: PerfTensor, cfg: GainConfig | None = None) -> GainModel:
    """Adversarial training on learner images; one iteration is one pass over all learners.

    The observed-cell reconstruction RMSE is recorded after every iteration and
    training stops at the first value at or below ``cfg.early_stop_rmse``.
    """
    cfg = cfg or GainConfig()
    if t.n_observed == 0:
        raise ValueError("tensor has no observed cells")
    model = build_model(t.shape[1:], cfg)
    gstate = AdamState.create(model.generator[1], cfg.learning_rate)
    dstate = AdamState.create(model.discriminator[1], cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x6A1]))
    U = t.shape[0]
    bs = min(U, cfg.batch_size)
    mask = t.mask
    for it in range(1, cfg.max_iterations + 1):
        order = rng.permutation(U)
        for start in range(0, U, bs):
            idx = order[start:start + bs]
            gp, dp, gstate, dstate = _train_batch(model, gstate, dstate, t.values[idx], mask[idx], rng, it)
            model.generator = (model.generator[0], gp)
            model.discriminator = (model.discriminator[0], dp)
        r = observed_rmse(model, t)
        _check(r, "reconstruction", it)
        model.training_curve.append((it, r))
        log.debug("gain iteration %d observed rmse %.4f", it, r)
        if r <= cfg.early_stop_rmse:
            break
    return model


def impute(model: GainModel, t: PerfTensor) -> np.ndarray:
    """Dense (U, N, M) completion: observed cells verbatim, generator output elsewhere."""
    if t.shape[1:] != tuple(model.shape):
        raise ValueError(f"tensor shape {t.shape} does not match model {model.shape}")
    gen, _ = generator_forward(model, t.values, seed=np.random.SeedSequence([model.config.seed, 0x1A]))
    return merge_imputed(t.values, gen, t.mask)


def save_model(path, model: GainModel) -> None:
    arrays = {}
    for tag, (_, p) in (("G", model.generator), ("D", model.discriminator)):
        arrays.update({f"{tag}/w/{k}": v for k, v in p.weights.items()})
        arrays.update({f"{tag}/s/{k}": v for k, v in p.stats.items()})
    meta = {"kind": "gain", "config": asdict(model.config), "shape": list(model.shape), "curve": model.training_curve}
    neural.save_arrays(path, arrays, meta)


def load_model(path) -> GainModel:
    arrays, meta = neural.load_arrays(path)
    cfg = GainConfig(**meta["config"])
    model = build_model(tuple(meta["shape"]), cfg)
    model.generator = (model.generator[0], neural.split_params(arrays, "G/"))
    model.discriminator = (model.discriminator[0], neural.split_params(arrays, "D/"))
    model.training_curve = [(int(i), float(r)) for i, r in meta["curve"]]
    return model


def write_curve(curve, stream) -> None:
    stream.write("iteration,rmse\n")
    for i, r in curve:
        stream.write(f"{i},{r!r}\n")

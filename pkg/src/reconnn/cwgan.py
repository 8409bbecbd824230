"""Compressed WGAN: a VAE squeezes contour images into 16x16x1 codes, a
weight-clipped WGAN learns the code distribution, and the VAE decoder turns
generated codes back into contour images.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import OptimizerError, ShapeError, TrainingError
from .nn import checkpoint
from .nn.layers import (BatchNorm, Conv2D, Deconv2D, Dense, Flatten, LeakyReLU, MaxPool2D,
                        ReLU, Reshape, Sequential, Sigmoid)
from .nn.optim import AdamState, RmsPropState, adam_step, rmsprop_step

CODE_SIDE = 16
LATENT = CODE_SIDE * CODE_SIDE


def reparameterize(z_mean, z_log_var, eps):
    z_mean, z_log_var, eps = (np.asarray(a, dtype=np.float64) for a in (z_mean, z_log_var, eps))
    if not (z_mean.shape == z_log_var.shape == eps.shape):
        raise ShapeError(f"shapes differ: {z_mean.shape}, {z_log_var.shape}, {eps.shape}")
    return z_mean + eps * np.exp(z_log_var / 2.0)


def kl_term(z_mean, z_log_var):
    """Per-sample KL(N(m, exp(lv)) || N(0, 1)) summed over the last axis."""
    z_mean, z_log_var = np.asarray(z_mean, dtype=np.float64), np.asarray(z_log_var, dtype=np.float64)
    # expm1(lv) - lv is the cancellation-free form of exp(lv) - 1 - lv
    return 0.5 * np.sum(np.expm1(z_log_var) - z_log_var + z_mean * z_mean, axis=-1)


@dataclass
class VaeLoss:
    total: float
    reconstruction: float
    kl: float


def vae_loss(x, recon, z_mean, z_log_var) -> VaeLoss:
    """Batch-mean negative ELBO: sum-of-squares reconstruction plus Gaussian KL."""
    x, recon = np.asarray(x, dtype=np.float64), np.asarray(recon, dtype=np.float64)
    if x.shape != recon.shape:
        raise ShapeError(f"input {x.shape} vs reconstruction {recon.shape}")
    z_mean = np.atleast_2d(z_mean)
    z_log_var = np.atleast_2d(z_log_var)
    if z_mean.shape != z_log_var.shape:
        raise ShapeError("z_mean and z_log_var shapes differ")
    b = max(len(z_mean), 1)
    rec = float(np.sum((x - recon) ** 2)) / b
    kl = float(np.sum(kl_term(z_mean, z_log_var))) / b
    return VaeLoss(rec + kl, rec, kl)


def _encoder(in_shape, seed):
    c, h, w = in_shape
    if h % 4 or w % 4:
        raise ShapeError(f"VAE needs image sides divisible by 4, got {h}x{w}")
    layers = [Conv2D(8, 3), BatchNorm(), ReLU(), MaxPool2D(2),
              Conv2D(16, 3), BatchNorm(), ReLU(), MaxPool2D(2),
              Flatten(), Dense(256), ReLU(), Dense(2 * LATENT)]
    net = Sequential(layers, in_shape, seed=seed)
    # start near the prior: fan-in scaled outputs would give exp(z_log_var) ~ e^30
    net.layers[-1].params["W"] *= 0.01
    return net


def _decoder(out_shape, seed):
    c, h, w = out_shape
    layers = [Dense(256), ReLU(), Dense(16 * (h // 4) * (w // 4)), ReLU(),
              Reshape((16, h // 4, w // 4)),
              Deconv2D(8, 4, 2, 1), BatchNorm(), ReLU(),
              Deconv2D(c, 4, 2, 1), BatchNorm(), Sigmoid()]
    return Sequential(layers, (LATENT,), seed=seed)


class VaeModel:
    """Encoder/decoder pair plus the per-entry code range used to map codes to [0, 1]."""

    def __init__(self, encoder: Sequential, decoder: Sequential, code_lo=None, code_hi=None):
        self.encoder, self.decoder = encoder, decoder
        self.code_lo = np.zeros(LATENT) if code_lo is None else np.asarray(code_lo, dtype=np.float64)
        self.code_hi = np.ones(LATENT) if code_hi is None else np.asarray(code_hi, dtype=np.float64)

    @classmethod
    def create(cls, image_shape, seed=0):
        return cls(_encoder(tuple(image_shape), seed), _decoder(tuple(image_shape), seed + 1))

    @property
    def image_shape(self):
        return self.encoder.in_shape

    @property
    def latent_shape(self):
        return (CODE_SIDE, CODE_SIDE, 1)

    def encode(self, x, train=False):
        h = self.encoder(np.asarray(x, dtype=np.float64), train)
        return h[:, :LATENT], h[:, LATENT:]

    def decode(self, z, train=False):
        return self.decoder(np.asarray(z, dtype=np.float64), train)

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def fit_code_range(self, codes):
        flat = np.asarray(codes, dtype=np.float64).reshape(len(codes), LATENT)
        lo, hi = flat.min(axis=0), flat.max(axis=0)
        pad = np.maximum(0.05 * (hi - lo), 1e-6)
        self.code_lo, self.code_hi = lo - pad, hi + pad

    def normalize_codes(self, codes):
        c = np.asarray(codes, dtype=np.float64).reshape(len(codes), LATENT)
        return ((c - self.code_lo) / (self.code_hi - self.code_lo)).reshape(-1, CODE_SIDE, CODE_SIDE, 1)

    def denormalize_codes(self, u):
        u = np.asarray(u, dtype=np.float64).reshape(len(u), LATENT)
        return (self.code_lo + u * (self.code_hi - self.code_lo)).reshape(-1, CODE_SIDE, CODE_SIDE, 1)

    def save(self, path, extra=None):
        he, ae = checkpoint.model_entry("encoder", self.encoder)
        hd, ad = checkpoint.model_entry("decoder", self.decoder)
        arrays = {**ae, **ad, "code/lo": self.code_lo, "code/hi": self.code_hi}
        return checkpoint.save(path, {"model": "vae", "encoder": he, "decoder": hd, **(extra or {})},
                               arrays)

    @classmethod
    def load(cls, path) -> "VaeModel":
        head, arrays = checkpoint.load(path)
        enc = Sequential.from_specs(head["encoder"]["specs"], head["encoder"]["in_shape"])
        dec = Sequential.from_specs(head["decoder"]["specs"], head["decoder"]["in_shape"])
        enc.load_arrays(*checkpoint.restore_arrays("encoder", arrays))
        dec.load_arrays(*checkpoint.restore_arrays("decoder", arrays))
        return cls(enc, dec, arrays["code/lo"], arrays["code/hi"])


@dataclass
class VaeConfig:
    epochs: int = 10
    batch: int = 32
    lr: float = 3e-3
    seed: int = 0


@dataclass
class VaeReport:
    epoch_mse: list = field(default_factory=list)  # per-pixel training MSE per epoch
    epoch_kl: list = field(default_factory=list)
    final_mse: float = float("nan")  # deterministic (z_mean) reconstruction MSE
    baseline_mse: float = float("nan")  # MSE of predicting the mean image


def _nan_guard(params, good, what, model):
    for p, g in zip(params, good):
        p[...] = g
    raise TrainingError(f"{what} loss became non-finite", checkpoint=model)


def vae_gradients(vae: VaeModel, x, eps):
    """Negative ELBO of a batch and its gradients, aligned with ``vae.parameters()``.

    ``eps`` is the standard-normal draw used for the reparameterised sample.
    Gradients are None when the loss is not finite.
    """
    h, ecache = vae.encoder.forward(x, True)
    m, lv = h[:, :LATENT], h[:, LATENT:]
    z = reparameterize(m, lv, eps)
    xr, dcache = vae.decoder.forward(z, True)
    loss = vae_loss(x, xr, m, lv)
    if not np.isfinite(loss.total):
        return loss, None
    b = len(x)
    dz, dgrads = vae.decoder.backward(dcache, 2.0 * (xr - x) / b)
    dm = dz + m / b
    dlv = dz * eps * 0.5 * np.exp(lv / 2.0) + 0.5 * np.expm1(lv) / b
    _, egrads = vae.encoder.backward(ecache, np.concatenate([dm, dlv], axis=1))
    return loss, egrads + dgrads


def vae_train_step(vae: VaeModel, x, eps, opt: AdamState) -> VaeLoss:
    """One Adam step on the batch-mean negative ELBO; returns the pre-update loss."""
    loss, grads = vae_gradients(vae, x, eps)
    if grads is None:
        return loss
    try:
        adam_step(opt, vae.parameters(), grads)
    except OptimizerError:
        return VaeLoss(float("nan"), float("nan"), float("nan"))
    return loss


def reconstruction_mse(vae: VaeModel, images, batch=64) -> float:
    """Per-pixel MSE of decode(z_mean) in inference mode."""
    images = np.asarray(images, dtype=np.float64)
    tot = 0.0
    for i in range(0, len(images), batch):
        x = images[i:i + batch]
        tot += float(np.sum((vae.decode(vae.encode(x)[0]) - x) ** 2))
    return tot / images.size


def train_vae(images, cfg: VaeConfig, log=None, vae: VaeModel | None = None):
    """Adam on the negative ELBO; returns (VaeModel, VaeReport).

    The code range used by :meth:`VaeModel.normalize_codes` is fitted on the
    training images at the end.
    """
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise TrainingError("empty dataset")
    vae = vae or VaeModel.create(images.shape[1:], cfg.seed)
    params = vae.parameters()
    opt = AdamState.for_params(params, eps_lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 7)
    report = VaeReport()
    good = [p.copy() for p in params]
    npix = int(np.prod(images.shape[1:]))
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(images))
        rec = kl = 0.0
        for s in range(0, len(perm), cfg.batch):
            x = images[perm[s:s + cfg.batch]]
            eps = rng.standard_normal((len(x), LATENT))
            loss = vae_train_step(vae, x, eps, opt)
            if not np.isfinite(loss.total):
                _nan_guard(params, good, "VAE", vae)
            rec += loss.reconstruction * len(x)
            kl += loss.kl * len(x)
        report.epoch_mse.append(rec / (len(images) * npix))
        report.epoch_kl.append(kl / len(images))
        good = [p.copy() for p in params]
        if log:
            log(f"vae epoch {epoch + 1}/{cfg.epochs} mse {report.epoch_mse[-1]:.6g} "
                f"kl {report.epoch_kl[-1]:.6g}")
    report.final_mse = reconstruction_mse(vae, images)
    report.baseline_mse = float(np.mean((images - images.mean(axis=0)) ** 2))
    vae.fit_code_range(compress_batch(vae, images))
    return vae, report


def compress(vae: VaeModel, image) -> np.ndarray:
    """Deterministic 16x16x1 code (z_mean) of one (C, H, W) image."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != vae.image_shape:
        raise ShapeError(f"image shape {image.shape} does not match VAE input {vae.image_shape}")
    return compress_batch(vae, image[None])[0]


def compress_batch(vae: VaeModel, images, batch=64) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1:] != vae.image_shape:
        raise ShapeError(f"expected (N, {vae.image_shape}) images, got {images.shape}")
    out = [vae.encode(images[i:i + batch])[0] for i in range(0, len(images), batch)]
    z = np.concatenate(out) if out else np.zeros((0, LATENT))
    return z.reshape(-1, CODE_SIDE, CODE_SIDE, 1)


def _generator(noise_dim, seed):
    layers = [Dense(32 * 4 * 4), BatchNorm(), ReLU(), Reshape((32, 4, 4)),
              Deconv2D(16, 4, 2, 1), BatchNorm(), ReLU(),
              Deconv2D(1, 4, 2, 1), BatchNorm(), Sigmoid()]
    return Sequential(layers, (noise_dim,), seed=seed)


def _critic(seed):
    layers = [Conv2D(16, 4, 2, 1), BatchNorm(), LeakyReLU(0.2),
              Conv2D(32, 4, 2, 1), BatchNorm(), LeakyReLU(0.2),
              Flatten(), Dense(1)]
    return Sequential(layers, (1, CODE_SIDE, CODE_SIDE), seed=seed)


@dataclass
class WganConfig:
    clip_c: float = 0.01
    n_critic: int = 5
    rho: float = 0.9
    lr: float = 5e-5
    batch: int = 32
    steps: int = 2000  # generator steps
    noise_dim: int = 64
    seed: int = 0


class WganModel:
    def __init__(self, generator: Sequential, critic: Sequential, clip_c=0.01, n_critic=5):
        self.generator, self.critic = generator, critic
        self.clip_c, self.n_critic = float(clip_c), int(n_critic)

    @classmethod
    def create(cls, cfg: WganConfig):
        model = cls(_generator(cfg.noise_dim, cfg.seed), _critic(cfg.seed + 1), cfg.clip_c, cfg.n_critic)
        model.clip()
        return model

    @property
    def noise_dim(self):
        return self.generator.in_shape[0]

    def clip(self):
        for p in self.critic.parameters():
            np.clip(p, -self.clip_c, self.clip_c, out=p)

    def max_critic_weight(self) -> float:
        return max(float(np.max(np.abs(p))) for p in self.critic.parameters())

    def sample_codes(self, noise) -> np.ndarray:
        """Generator output in [0, 1], shaped (N, 16, 16, 1)."""
        g = self.generator(np.asarray(noise, dtype=np.float64), False)
        return g.reshape(-1, CODE_SIDE, CODE_SIDE, 1)

    def score(self, codes) -> np.ndarray:
        return self.critic(_nchw(codes), False)[:, 0]

    def save(self, path, extra=None):
        hg, ag = checkpoint.model_entry("generator", self.generator)
        hc, ac = checkpoint.model_entry("critic", self.critic)
        header = {"model": "wgan", "generator": hg, "critic": hc, "clip_c": self.clip_c,
                  "n_critic": self.n_critic, **(extra or {})}
        return checkpoint.save(path, header, {**ag, **ac})

    @classmethod
    def load(cls, path) -> "WganModel":
        head, arrays = checkpoint.load(path)
        gen = Sequential.from_specs(head["generator"]["specs"], head["generator"]["in_shape"])
        cri = Sequential.from_specs(head["critic"]["specs"], head["critic"]["in_shape"])
        gen.load_arrays(*checkpoint.restore_arrays("generator", arrays))
        cri.load_arrays(*checkpoint.restore_arrays("critic", arrays))
        return cls(gen, cri, head["clip_c"], head["n_critic"])


def _nchw(codes):
    c = np.asarray(codes, dtype=np.float64)
    return c.reshape(len(c), 1, CODE_SIDE, CODE_SIDE)


@dataclass
class WganTrace:
    step: list = field(default_factory=list)
    critic_loss: list = field(default_factory=list)
    gen_loss: list = field(default_factory=list)
    wasserstein: list = field(default_factory=list)
    max_critic_weight: list = field(default_factory=list)  # after every critic update

    def rows(self):
        return list(zip(self.step, self.critic_loss, self.gen_loss, self.wasserstein))


def critic_step(model: WganModel, real, fake, opt: RmsPropState) -> float:
    """Maximise mean f(real) - mean f(fake), then clip. Returns the estimate before the update.

    Real and generated codes share one critic batch so batch normalisation
    sees both; normalising them separately would hide any shift between them.
    """
    m = len(real)
    f, cache = model.critic.forward(np.concatenate([real, fake]), True)
    w = float(f[:m].mean() - f[m:].mean())
    df = np.concatenate([np.full((m, 1), -1.0 / m), np.full((len(fake), 1), 1.0 / len(fake))])
    _, grads = model.critic.backward(cache, df)
    rmsprop_step(opt, model.critic.parameters(), grads)
    model.clip()
    return w


def generator_step(model: WganModel, noise, real, opt: RmsPropState) -> float:
    """Maximise mean f(G(noise)); returns the generator loss -mean f(G(noise)).

    ``real`` rides along in the critic batch (as in :func:`critic_step`) but
    contributes no gradient.
    """
    m = len(real)
    g, gc = model.generator.forward(noise, True)
    f, fc = model.critic.forward(np.concatenate([real, g]), True)
    df = np.concatenate([np.zeros((m, 1)), np.full((len(g), 1), -1.0 / len(g))])
    dx, _ = model.critic.backward(fc, df)
    _, grads = model.generator.backward(gc, dx[m:])
    rmsprop_step(opt, model.generator.parameters(), grads)
    return -float(f[m:].mean())


def train_wgan(codes, cfg: WganConfig, log=None, model: WganModel | None = None):
    """Alternate ``n_critic`` critic updates with one generator update.

    ``codes`` are (N, 16, 16, 1) maps in [0, 1]. Returns (WganModel, WganTrace);
    the trace has one row per generator step.
    """
    real_all = _nchw(codes)
    if len(real_all) == 0:
        raise TrainingError("no codes to learn from")
    model = model or WganModel.create(cfg)
    rng = np.random.default_rng(cfg.seed + 11)
    c_opt = RmsPropState.for_params(model.critic.parameters(), rho=cfg.rho, eps_lr=cfg.lr)
    g_opt = RmsPropState.for_params(model.generator.parameters(), rho=cfg.rho, eps_lr=cfg.lr)
    trace = WganTrace()
    params = model.critic.parameters() + model.generator.parameters()
    good = [p.copy() for p in params]
    m = min(cfg.batch, len(real_all))
    for step in range(cfg.steps):
        w = 0.0
        try:
            for _ in range(model.n_critic):
                real = real_all[rng.choice(len(real_all), size=m, replace=len(real_all) < m)]
                fake = model.generator(rng.standard_normal((m, model.noise_dim)), True)
                w = critic_step(model, real, fake, c_opt)
                trace.max_critic_weight.append(model.max_critic_weight())
            real = real_all[rng.choice(len(real_all), size=m, replace=len(real_all) < m)]
            gl = generator_step(model, rng.standard_normal((m, model.noise_dim)), real, g_opt)
        except OptimizerError:
            gl = w = float("nan")
        if not (np.isfinite(w) and np.isfinite(gl)):
            _nan_guard(params, good, "WGAN", model)
        trace.step.append(step + 1)
        trace.critic_loss.append(-w)
        trace.gen_loss.append(gl)
        trace.wasserstein.append(w)
        if (step + 1) % 200 == 0:
            good = [p.copy() for p in params]
            if log:
                log(f"wgan step {step + 1}/{cfg.steps} W~{w:.4g} gen {gl:.4g}")
    return model, trace


def generate(wgan: WganModel, vae: VaeModel, n: int, seed: int, batch: int = 64) -> np.ndarray:
    """``n`` decoded contour images, (n, C, H, W); identical for identical seeds."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, wgan.noise_dim))
    out = []
    for i in range(0, n, batch):
        u = wgan.sample_codes(noise[i:i + batch])
        z = vae.denormalize_codes(u).reshape(len(u), LATENT)
        out.append(vae.decode(z))
    return np.concatenate(out) if out else np.zeros((0,) + tuple(vae.image_shape))


def config_dict(cfg) -> dict:
    return asdict(cfg)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from reconnn import nn
from reconnn import cwgan as cw
from reconnn.errors import ShapeError, TrainingError

finite = st.floats(-5, 5, allow_nan=False, allow_subnormal=False)


def test_reparameterize_examples():
    assert cw.reparameterize([0.0], [0.0], [1.0])[0] == 1.0
    assert cw.reparameterize([2.0], [2 * math.log(3.0)], [1.0])[0] == pytest.approx(5.0, abs=1e-12)
    m = np.array([0.3, -1.2])
    assert np.array_equal(cw.reparameterize(m, [4.0, -3.0], [0.0, 0.0]), m)
    with pytest.raises(ShapeError):
        cw.reparameterize([0.0], [0.0, 1.0], [1.0])


@settings(max_examples=50, deadline=None)
@given(m=arrays(np.float64, 8, elements=finite), lv=arrays(np.float64, 8, elements=finite),
       e1=arrays(np.float64, 8, elements=finite), e2=arrays(np.float64, 8, elements=finite))
def test_reparameterize_affine_in_eps(m, lv, e1, e2):
    lhs = cw.reparameterize(m, lv, e1) + cw.reparameterize(m, lv, e2) - cw.reparameterize(m, lv, 0 * e1)
    rhs = cw.reparameterize(m, lv, e1 + e2)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, np.abs(rhs).max()))


def test_vae_loss_examples():
    x = np.random.default_rng(0).random((2, 3, 4, 4))
    zero = cw.vae_loss(x, x, np.zeros((2, 5)), np.zeros((2, 5)))
    assert zero.total == 0.0 and zero.kl == 0.0 and zero.reconstruction == 0.0
    one = cw.vae_loss(x[:1], x[:1], np.array([[1.0]]), np.array([[0.0]]))
    assert one.kl == pytest.approx(0.5, abs=1e-15)
    assert one.total == one.kl + one.reconstruction


def test_kl_nonnegative_on_random_draws():
    r = np.random.default_rng(5)
    m = r.normal(0, 3, (10_000, 1))
    lv = r.normal(0, 3, (10_000, 1))
    kl = cw.kl_term(m, lv)
    assert np.all(kl >= 0)
    assert np.all(kl[(m[:, 0] != 0) | (lv[:, 0] != 0)] > 0)
    assert cw.kl_term(np.zeros(3), np.zeros(3)) == 0.0
    # oracle: the textbook form
    direct = 0.5 * (np.exp(lv) + m * m - 1 - lv)[:, 0]
    assert np.allclose(kl, direct, rtol=1e-9, atol=1e-12)


@pytest.fixture(scope="module")
def tiny_images():
    r = np.random.default_rng(3)
    base = np.linspace(0, 1, 8)[None, None, :] * np.ones((3, 8, 1))
    return np.clip(base[None] * r.uniform(0.3, 1.0, (24, 1, 1, 1)) + r.normal(0, 0.02, (24, 3, 8, 8)),
                   0, 1)


def test_vae_shapes_and_compress(tiny_images):
    vae = cw.VaeModel.create((3, 8, 8), seed=0)
    m, lv = vae.encode(tiny_images[:4])
    assert m.shape == (4, cw.LATENT) and lv.shape == (4, cw.LATENT)
    assert vae.decode(m).shape == (4, 3, 8, 8)
    code = cw.compress(vae, tiny_images[0])
    assert code.shape == (16, 16, 1) == vae.latent_shape
    assert np.array_equal(code, cw.compress(vae, tiny_images[0].copy()))
    assert cw.compress_batch(vae, tiny_images[:0]).shape == (0, 16, 16, 1)
    with pytest.raises(ShapeError):
        cw.compress(vae, np.zeros((3, 8, 12)))
    with pytest.raises(ShapeError):
        cw.VaeModel.create((3, 10, 8))


def test_vae_objective_grad_check(tiny_images):
    vae = cw.VaeModel.create((3, 8, 8), seed=2)
    x = tiny_images[:3]
    eps = np.random.default_rng(0).standard_normal((3, cw.LATENT))
    loss, grads = cw.vae_gradients(vae, x, eps)
    r = np.random.default_rng(1)
    worst = 0.0
    for p, g in zip(vae.parameters(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        idx = r.choice(flat.size, size=min(flat.size, 12), replace=False)
        num = np.empty(len(idx))
        for j, c in enumerate(idx):
            old = flat[c]
            flat[c] = old + 1e-5
            fp = cw.vae_gradients(vae, x, eps)[0].total
            flat[c] = old - 1e-5
            fm = cw.vae_gradients(vae, x, eps)[0].total
            flat[c] = old
            num[j] = (fp - fm) / 2e-5
        worst = max(worst, nn.rel_error(gflat[idx], num))
    assert worst < 1e-4


@pytest.mark.parametrize("which", ["critic", "generator"])
def test_wgan_stack_grad_check(which):
    r = np.random.default_rng(4)
    eps = 1e-5
    if which == "critic":
        net = cw._critic(seed=3)
        x = r.random((4, 1, 16, 16))
    else:
        net = cw._generator(8, seed=3)
        x = r.standard_normal((4, 8))
        # batch norm over four samples bends the input response sharply;
        # the central-difference error falls as eps**2 so a smaller step is used
        eps = 1e-6
    w = r.normal(size=(4,) + net.out_shape)
    report = nn.grad_check(net, x, nn.linear_loss(w), eps=eps, max_per_tensor=25)
    assert report.worst < 1e-4, str(report)


@pytest.mark.xfail(strict=True, reason="batch norm over one sample plus a collapsed posterior: "
                   "inference-mode MSE plateaus near 1e-2 after 2000 steps")
def test_vae_memorises_single_image(tiny_images):
    vae, rep = cw.train_vae(tiny_images[:1], cw.VaeConfig(epochs=2000, batch=1, lr=3e-3))
    assert rep.epoch_mse[-1] < rep.epoch_mse[0] / 10
    assert rep.final_mse < 1e-3


def test_vae_training_curve_falls(tiny_images):
    vae, rep = cw.train_vae(tiny_images, cw.VaeConfig(epochs=60, batch=8, lr=3e-3))
    assert len(rep.epoch_mse) == len(rep.epoch_kl) == 60
    assert rep.epoch_mse[-1] < rep.epoch_mse[0] / 4
    assert rep.baseline_mse == pytest.approx(np.mean((tiny_images - tiny_images.mean(axis=0)) ** 2))
    u = vae.normalize_codes(cw.compress_batch(vae, tiny_images))
    assert u.min() >= 0.0 and u.max() <= 1.0
    assert np.allclose(vae.denormalize_codes(u), cw.compress_batch(vae, tiny_images))


def test_vae_divergence_raises(tiny_images):
    vae = cw.VaeModel.create((3, 8, 8))
    vae.decoder.layers[0].params["W"][...] = np.inf
    with pytest.raises(TrainingError) as info:
        with np.errstate(all="ignore"):
            cw.train_vae(tiny_images, cw.VaeConfig(epochs=1), vae=vae)
    assert info.value.checkpoint is vae


def _toy_codes(n, rng):
    comp = rng.random(n) < 0.75
    vals = np.where(comp, rng.normal(0.2, 0.03, n), rng.normal(0.6, 0.03, n))
    return np.clip(vals[:, None, None, None] + rng.normal(0, 0.02, (n, 16, 16, 1)), 0, 1)


def test_critic_clip_bound_every_update():
    codes = _toy_codes(64, np.random.default_rng(0))
    model, trace = cw.train_wgan(codes, cw.WganConfig(steps=6, n_critic=3, clip_c=0.02, lr=1e-2))
    assert len(trace.max_critic_weight) == 18
    assert max(trace.max_critic_weight) <= 0.02
    assert len(trace.rows()) == 6 and trace.step == list(range(1, 7))


def test_identical_distributions_zero_estimate():
    model = cw.WganModel.create(cw.WganConfig())
    code = np.full((8, 1, 16, 16), 0.4)
    opt = nn.RmsPropState.for_params(model.critic.parameters(), eps_lr=1e-2)
    for _ in range(5):
        w = cw.critic_step(model, code, code.copy(), opt)
        assert abs(w) < 1e-12


def test_generator_output_contract():
    model = cw.WganModel.create(cw.WganConfig(noise_dim=16))
    g = model.sample_codes(np.random.default_rng(0).standard_normal((5, 16)))
    assert g.shape == (5, 16, 16, 1)
    assert g.min() >= 0.0 and g.max() <= 1.0


def test_generate_contracts(tiny_images):
    vae = cw.VaeModel.create((3, 8, 8))
    wgan = cw.WganModel.create(cw.WganConfig(noise_dim=16))
    assert cw.generate(wgan, vae, 0, seed=1).shape == (0, 3, 8, 8)
    a = cw.generate(wgan, vae, 70, seed=9)
    assert a.shape == (70, 3, 8, 8)
    assert np.array_equal(a, cw.generate(wgan, vae, 70, seed=9))
    assert not np.array_equal(a, cw.generate(wgan, vae, 70, seed=10))


def test_wgan_training_deterministic_and_saved(tmp_path):
    codes = _toy_codes(48, np.random.default_rng(1))
    cfg = cw.WganConfig(steps=3, batch=16, lr=1e-3)
    m1, t1 = cw.train_wgan(codes, cfg)
    m2, t2 = cw.train_wgan(codes, cfg)
    assert t1.wasserstein == t2.wasserstein
    m1.save(tmp_path / "a.ckpt")
    m2.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back = cw.WganModel.load(tmp_path / "a.ckpt")
    noise = np.random.default_rng(2).standard_normal((4, cfg.noise_dim))
    assert np.array_equal(back.sample_codes(noise), m1.sample_codes(noise))
    with pytest.raises(TrainingError):
        cw.train_wgan(codes[:0], cfg)


def test_vae_save_load(tmp_path, tiny_images):
    vae, _ = cw.train_vae(tiny_images, cw.VaeConfig(epochs=1, batch=8))
    vae.save(tmp_path / "v.ckpt")
    back = cw.VaeModel.load(tmp_path / "v.ckpt")
    assert np.array_equal(cw.compress_batch(back, tiny_images), cw.compress_batch(vae, tiny_images))
    assert np.array_equal(back.code_lo, vae.code_lo)

"""Frequency/timestep guidance losses and the PGD driver."""

import math
from dataclasses import replace

import numpy as np
import pytest
from conftest import dct2_bruteforce, finite_diff, max_rel_err

from antipure import attack, denoiser, diffusion
from antipure.tensor import GradientTape, Tensor, backward

CFG8 = attack.AttackConfig(t_p=10, t_err=99, patch_size=4, steps=20, seed=5)


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def test_loss_fre_constant_image_is_half():
    for c in (0.0, -0.4, 0.9):
        assert attack.loss_fre(np.full((1, 8, 8), c), 4).item() == 0.5


def test_loss_fre_checkerboard_matches_bruteforce_oracle():
    s = 8
    cb = np.indices((s, s)).sum(axis=0) % 2 * 2.0 - 1.0   # +-1 at pixel scale
    img = np.tile(cb, (2, 2))[None, :, :]                 # four identical patches
    coefs = dct2_bruteforce(cb)
    inner = 4.0 / (s * s) * coefs[s // 2:, s // 2:].sum()
    got = attack.loss_fre(img, s).item()
    assert abs(got - sigmoid(inner)) < 1e-12
    # the checkerboard concentrates in the highest mode, far from sigma(0)
    assert abs(coefs[s - 1, s - 1]) > 1.0


def test_loss_fre_output_range():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = attack.loss_fre(rng.uniform(-3, 3, (2, 8, 8)), 4).item()
        assert 0.0 < v < 1.0


def test_loss_fre_gradient_matches_finite_differences():
    x0 = np.random.default_rng(1).uniform(-1, 1, (1, 8, 8))
    tape = GradientTape()
    leaf = tape.watch(Tensor(x0.copy()))
    g = backward(attack.loss_fre(leaf, 4), tape, leaf).data
    fd = finite_diff(lambda a: attack.loss_fre(a, 4).item(), x0)
    assert max_rel_err(g, fd) < 1e-4


def test_loss_fre_rejects_bad_patch_sizes():
    img = np.zeros((1, 8, 8))
    for s in (3, 0, 5):
        with pytest.raises(ValueError):
            attack.loss_fre(img, s)
    with pytest.raises(ValueError):
        attack.loss_fre(img, 6)  # even but does not divide 8


def test_loss_err_t_zero_cases(sched, tiny_model):
    x = np.random.default_rng(2).standard_normal((1, 8, 8))
    assert attack.loss_err_t(tiny_model, x, 10, 10, sched).item() == 0.0

    class TimestepBlind:
        def predict(self, x_t, t):
            return denoiser.forward(tiny_model, x_t, 1)

    for t, t_err in ((10, 99), (3, 40)):
        assert attack.loss_err_t(TimestepBlind(), x, t, t_err, sched).item() == 0.0


def test_loss_err_t_negative_and_matches_two_forwards(sched, trained_model, eval_images):
    x_t = diffusion.diffuse(eval_images[0], 10,
                            np.random.default_rng(3).standard_normal(eval_images[0].shape),
                            sched).data
    got = attack.loss_err_t(trained_model, x_t, 10, 99, sched).item()
    assert got < 0.0
    a = denoiser.forward(trained_model, x_t, 99).data
    b = denoiser.forward(trained_model, x_t, 10).data
    assert abs(got - (-np.mean((a - b) ** 2))) < 1e-12


def test_loss_err_t_rejects_out_of_range(sched, tiny_model):
    x = np.zeros((1, 8, 8))
    with pytest.raises(ValueError):
        attack.loss_err_t(tiny_model, x, 0, 10, sched)
    with pytest.raises(ValueError):
        attack.loss_err_t(tiny_model, x, 10, 101, sched)


def test_loss_pgd_ddpm_only_equals_ddpm_loss(sched, tiny_model):
    rng = np.random.default_rng(4)
    x0 = rng.uniform(-0.5, 0.5, (1, 8, 8))
    eps = rng.standard_normal(x0.shape)
    cfg = replace(CFG8, losses=("ddpm",))
    total, comps = attack.loss_pgd(tiny_model, x0, np.zeros_like(x0), 5, eps, cfg, sched)
    expected = diffusion.ddpm_loss(tiny_model, x0, 5, eps, sched).item()
    assert total.item() == expected
    assert comps["ddpm"] == expected and math.isnan(comps["fre"])


def test_loss_pgd_terr_equals_t_with_zero_lambda1(sched, tiny_model):
    rng = np.random.default_rng(5)
    x0 = rng.uniform(-0.5, 0.5, (1, 8, 8))
    eps = rng.standard_normal(x0.shape)
    cfg = replace(CFG8, lambda1=0.0, t_err=5)
    total, comps = attack.loss_pgd(tiny_model, x0, np.zeros_like(x0), 5, eps, cfg, sched)
    assert abs(total.item() - (comps["ddpm"] + cfg.lambda2)) < 1e-15
    assert comps["err_t"] == 0.0


def test_loss_pgd_matches_hand_chained_components(sched, tiny_model):
    rng = np.random.default_rng(6)
    x0 = rng.uniform(-0.5, 0.5, (1, 8, 8))
    delta = rng.uniform(-0.05, 0.05, x0.shape)
    eps = rng.standard_normal(x0.shape)
    t = 7
    total, _ = attack.loss_pgd(tiny_model, x0, delta, t, eps, CFG8, sched)

    x_t = diffusion.diffuse(x0 + delta, t, eps, sched)
    eps_pred = denoiser.forward(tiny_model, x_t, t)
    l_ddpm = float(np.mean((eps - eps_pred.data) ** 2))
    x0_hat = diffusion.predict_x0(x_t, eps_pred, t, sched)
    l_fre = attack.loss_fre(x0_hat, CFG8.patch_size).item()
    l_err = attack.loss_err_t(tiny_model, x_t, t, CFG8.t_err, sched).item()
    expected = (l_ddpm
                + CFG8.lambda1 * math.exp(sched.alpha_bar_at(t) - 1.0) * l_fre
                + CFG8.lambda2 * math.exp(l_err))
    assert abs(total.item() - expected) < 1e-12


def test_loss_pgd_rejects_t_above_tp(sched, tiny_model):
    x0 = np.zeros((1, 8, 8))
    with pytest.raises(ValueError, match="t_p"):
        attack.loss_pgd(tiny_model, x0, x0, 11, x0, CFG8, sched)


def test_pgd_zero_steps_is_identity(sched, tiny_model):
    x0 = np.random.default_rng(7).uniform(-1, 1, (1, 8, 8))
    cfg = replace(CFG8, steps=0)
    x_adv, trace = attack.pgd_attack(x0, tiny_model, cfg, sched)
    np.testing.assert_array_equal(x_adv, x0)
    assert trace.records == []


def test_pgd_projection_invariants(sched, tiny_model):
    x0 = np.random.default_rng(8).uniform(-1, 1, (1, 8, 8))
    x_adv, trace = attack.pgd_attack(x0, tiny_model, CFG8, sched)
    assert len(trace.records) == CFG8.steps
    for rec in trace.records:
        assert rec.delta_linf <= CFG8.eta + 1e-12
        assert 1 <= rec.t <= CFG8.t_p
    assert np.max(np.abs(x_adv - x0)) <= CFG8.eta + 1e-9
    assert np.max(np.abs(x_adv)) <= 1.0


def test_pgd_is_deterministic(sched, tiny_model):
    x0 = np.random.default_rng(9).uniform(-1, 1, (1, 8, 8))
    a, tr_a = attack.pgd_attack(x0, tiny_model, CFG8, sched)
    b, tr_b = attack.pgd_attack(x0, tiny_model, CFG8, sched)
    assert a.tobytes() == b.tobytes()
    assert tr_a.records == tr_b.records


def test_pgd_frozen_noise_ascends(sched, trained_model, eval_images):
    cfg = attack.AttackConfig(steps=30, frozen_noise=True, seed=21)
    ok = total = 0
    for x0 in eval_images[:2]:
        _, trace = attack.pgd_attack(x0, trained_model, cfg, sched)
        vals = [r.l_total for r in trace.records]
        ok += sum(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        total += len(vals) - 1
    assert ok / total >= 0.9, f"only {ok}/{total} consecutive steps non-decreasing"


def test_masked_weight_matches_structural_mask(sched, tiny_model):
    """lambda = 0 and dropping the term entirely give bit-identical images."""
    x0 = np.random.default_rng(10).uniform(-1, 1, (1, 8, 8))
    soft = replace(CFG8, steps=6, lambda1=0.0, losses=("ddpm", "fre", "err_t"))
    hard = replace(CFG8, steps=6, lambda1=0.0, losses=("ddpm", "err_t"))
    a, tr_a = attack.pgd_attack(x0, tiny_model, soft, sched)
    b, tr_b = attack.pgd_attack(x0, tiny_model, hard, sched)
    assert a.tobytes() == b.tobytes()
    assert [r.l_total for r in tr_a.records] == [r.l_total for r in tr_b.records]


def test_perturb_arm_dispatch(sched, tiny_model):
    x0 = np.random.default_rng(11).uniform(-1, 1, (1, 8, 8))
    out, trace = attack.perturb_arm("none", x0, tiny_model, CFG8, sched)
    np.testing.assert_array_equal(out, x0)
    assert trace.records == []
    with pytest.raises(ValueError, match="unknown arm"):
        attack.perturb_arm("bogus", x0, tiny_model, CFG8, sched)


def test_attack_config_validation():
    with pytest.raises(ValueError):
        attack.AttackConfig(eta=0.0)
    with pytest.raises(ValueError):
        attack.AttackConfig(patch_size=5)
    with pytest.raises(ValueError):
        attack.AttackConfig(losses=("nope",))
    cfg = attack.AttackConfig(losses=("err_t", "ddpm"))
    assert cfg.losses == ("ddpm", "err_t")  # canonical order

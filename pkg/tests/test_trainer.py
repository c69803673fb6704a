import math

import numpy as np
import pytest

from remixgan.config import ConfigError, ExperimentConfig
from remixgan.losses import (
    adversarial_loss_discriminator,
    adversarial_loss_generator,
    content_distance_per_item,
    margin_closed_form,
    relative_content_loss,
)
from remixgan.tensor import Tensor, backward, grad_check_params, mean, no_grad
from remixgan.trainer import Trainer, read_metrics_csv, run_experiment


def small_cfg(**kw):
    base = dict(n_train=64, n_test=32, batch_size=4, iterations=6, eval_every=3, width=4, seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


def snapshot(module):
    return {n: p.data.copy() for n, p in module.named_parameters()}


def test_plain_step_matches_reference():
    cfg = small_cfg(scheme="none")
    tr = Trainer(cfg)
    ref = Trainer(cfg)
    tr.step()

    # independent replay: same draws, hand-written losses and Adam update
    i1, _, ir = ref.sample_indices()
    x1 = Tensor(ref.train_x[i1])
    with no_grad():
        fake = ref.gen(x1).data
    d_loss = adversarial_loss_discriminator(ref.disc(Tensor(ref.train_y[ir])), ref.disc(Tensor(fake)))
    backward(d_loss)
    d_grads = {n: p.grad.copy() for n, p in ref.disc.named_parameters()}
    expected_d = {}
    for n, p in ref.disc.named_parameters():
        g = d_grads[n]
        m = (1 - cfg.beta1) * g
        v = (1 - cfg.beta2) * g * g
        expected_d[n] = p.data - cfg.lr * (m / (1 - cfg.beta1)) / (np.sqrt(v / (1 - cfg.beta2)) + 1e-8)
        p.data = expected_d[n]
    for p in ref.disc.parameters():
        p.grad = None
    s = ref.gen(x1)
    g_loss = adversarial_loss_generator(ref.disc(s)) + mean(
        content_distance_per_item(ref.phi(s), Tensor(ref.phi(x1).data)))
    backward(g_loss)
    for n, p in ref.gen.named_parameters():
        g = p.grad
        m = (1 - cfg.beta1) * g
        v = (1 - cfg.beta2) * g * g
        want = p.data - cfg.lr * (m / (1 - cfg.beta1)) / (np.sqrt(v / (1 - cfg.beta2)) + 1e-8)
        np.testing.assert_allclose(tr.gen[n].data, want, rtol=0, atol=1e-15)
    for n, want in expected_d.items():
        np.testing.assert_allclose(tr.disc[n].data, want, rtol=0, atol=1e-15)


def test_scheme_none_never_draws_lambda():
    tr = Trainer(small_cfg(scheme="none", augment_probability=1.0))
    for _ in range(3):
        assert not tr.step().augmented
    assert tr.rngs["mix"].counter == 0 and tr.rngs["gate"].counter == 0


def test_remix_identical_batches_gives_zero_lp():
    tr = Trainer(small_cfg())
    i1, _, _ = tr.sample_indices()
    perm = np.array([1, 2, 3, 0])
    for lam in (0.5, 0.63, 0.91):
        bundle, extra = tr.generator_losses(i1, i1, (lam, perm))
        assert np.array_equal(extra["d1"], extra["d2"])
        assert extra["l_p"] == 0.0


def test_lambda_one_reproduces_unaugmented_distance():
    tr = Trainer(small_cfg())
    i1, i2, _ = tr.sample_indices()
    _, extra = tr.generator_losses(i1, i2, (1.0, np.array([1, 2, 3, 0])))
    s = tr.gen(Tensor(tr.train_x[i1]))
    plain = content_distance_per_item(tr.phi(s), Tensor(tr.train_t_feats[i1])).data
    assert np.array_equal(extra["d1"], plain)


@pytest.mark.parametrize("seed", range(5))
def test_remix_step_is_descent_direction(seed):
    tr = Trainer(small_cfg(seed=seed))
    tr.tracker.a_bar = 0.05
    i1, i2, _ = tr.sample_indices()
    plan = (0.7, np.array([1, 2, 3, 0]))
    tr.opt_g.zero_grad()
    bundle, _ = tr.generator_losses(i1, i2, plan)
    backward(bundle.total)
    before = bundle.total.item()
    for p in tr.gen.parameters():
        p.data = p.data - 1e-3 * p.grad
    with no_grad():
        after = tr.generator_losses(i1, i2, plan)[0].total.item()
    assert after < before


@pytest.mark.parametrize("scheme", ["mixup", "wm", "lsr"])
def test_estimating_schemes_run(scheme):
    tr = Trainer(small_cfg(scheme=scheme, augment_probability=1.0))
    res = tr.step()
    assert res.augmented and math.isfinite(res.losses["total"])
    assert tr.tracker.a_bar == 0.0


def test_zeroed_head_discriminator_loss_is_two_log_two():
    tr = Trainer(small_cfg())
    tr.disc["c3.w"].data[...] = 0.0
    tr.disc["c3.b"].data[...] = 0.0
    real = tr.train_y[:4]
    loss = tr.train_step_discriminator(real, real)
    assert loss == pytest.approx(2 * math.log(2.0), abs=1e-15)


def test_discriminator_gradient_check():
    tr = Trainer(small_cfg(width=2))
    real, fake = Tensor(tr.train_y[:2]), Tensor(tr.train_x[:2])
    res = grad_check_params(lambda: adversarial_loss_discriminator(tr.disc(real), tr.disc(fake)),
                            tr.disc.parameters())
    assert res.checked > 0 and res.max_error < 1e-3


def test_discriminator_step_leaves_generator_untouched():
    tr = Trainer(small_cfg())
    before = snapshot(tr.gen)
    tr.train_step_discriminator(tr.train_y[:4], tr.train_x[:4])
    after = snapshot(tr.gen)
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_phi_never_changes_during_training():
    tr = Trainer(small_cfg(augment_probability=1.0))
    before = [p.data.copy() for p in tr.phi.parameters()]
    for _ in range(4):
        tr.step()
    assert all(np.array_equal(a, p.data) for a, p in zip(before, tr.phi.parameters()))
    assert all(p.grad is None for p in tr.phi.parameters())


def test_gate_frequency():
    tr = Trainer(small_cfg())
    fired = sum(tr.draw_plan() is not None for _ in range(10_000))
    assert abs(fired / 10_000 - 0.25) <= 0.02


def test_margin_only_moves_on_augmented_steps_and_replays():
    tr = Trainer(small_cfg(augment_probability=0.5))
    for _ in range(12):
        before = tr.tracker.a_bar
        res = tr.step()
        if not res.augmented:
            assert tr.tracker.a_bar == before
        else:
            assert res.margin_stat is not None
    assert len(tr.margin_log) == tr.augmented_steps > 0
    assert abs(margin_closed_form(0.0, tr.margin_log, 0.99) - tr.tracker.a_bar) <= 1e-12


def test_per_item_lambda_switch():
    tr = Trainer(small_cfg(lambda_per_item=True, augment_probability=1.0))
    plan = tr.draw_plan()
    assert np.shape(plan[0]) == (4,) and np.all(plan[0] >= 0.5)
    assert tr.step().augmented


def test_input_mixing_switch():
    tr = Trainer(small_cfg(mix_at="input", augment_probability=1.0))
    assert tr.step().augmented


def test_paired_content_target():
    tr = Trainer(small_cfg(content_target="paired"))
    assert not np.array_equal(tr.train_t, tr.train_x)


def test_augmentation_needs_two_items():
    with pytest.raises(ConfigError) as err:
        small_cfg(batch_size=1).validate()
    assert err.value.key == "batch_size"
    small_cfg(batch_size=1, scheme="none").validate()


def test_budget_zero_has_only_init_row(tmp_path):
    report = run_experiment(small_cfg(iterations=0, output_dir=str(tmp_path)))
    assert [r["kind"] for r in report.rows] == ["init"]
    assert len(read_metrics_csv(tmp_path / "metrics.csv")) == 1


def test_same_seed_same_csv(tmp_path):
    a = run_experiment(small_cfg(output_dir=str(tmp_path / "a")))
    b = run_experiment(small_cfg(output_dir=str(tmp_path / "b")))
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert [r["iteration"] for r in a.rows] == [0, 3, 6]
    assert b.summary["iterations"] == 6


def test_resume_matches_uninterrupted(tmp_path):
    full = small_cfg(iterations=10, eval_every=4, checkpoint_every=5, augment_probability=0.5,
                     output_dir=str(tmp_path / "full"))
    run_experiment(full)
    resumed = full.replace(output_dir=str(tmp_path / "resumed"))
    run_experiment(resumed, resume=tmp_path / "full" / "checkpoint_000005.json")
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "resumed" / "metrics.csv").read_bytes()
    a = (tmp_path / "full" / "checkpoint.json").read_text()
    b = (tmp_path / "resumed" / "checkpoint.json").read_text()
    assert a.replace("full", "") == b.replace("resumed", "")


def test_resume_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError):
        Trainer.from_checkpoint(bad)

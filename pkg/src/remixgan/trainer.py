"""Training loop: augmentation gate, D and G steps, margin tracking,
evaluation and checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import data as data_mod
from .config import ExperimentConfig
from .interpolation import estimate_target, mix_features
from .losses import (
    LossBundle,
    MarginTracker,
    adversarial_loss_discriminator,
    adversarial_loss_generator,
    content_distance_per_item,
    margin_batch_statistic,
    margin_update,
    relative_content_loss,
)
from .metrics import FeatureStats, content_error, diversity_score, frechet_distance
from .models import ContentExtractor, Discriminator, Generator
from .sampling import MixWeightConfig, RngStream, derangement_permutation, draw_mix_weight, should_augment
from .tensor import Tensor, backward, mean, no_grad

log = logging.getLogger(__name__)

CSV_VERSION = 1
CSV_COLUMNS = [
    "iteration", "kind", "frechet", "diversity", "content_error", "d_loss", "g_gan", "g_content",
    "g_total", "a_bar", "augmented_steps", "window_steps",
]
CHECKPOINT_VERSION = 1
_STREAMS = ("batch", "gate", "mix", "perm")


class Adam:
    """Adam over a fixed, ordered list of named parameters."""

    def __init__(self, named_params, lr=2e-4, betas=(0.5, 0.999), eps=1e-8):
        self.named = list(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named}

    def zero_grad(self):
        for _, p in self.named:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.named:
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad
            m = self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            v = self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": {k: _arr(v) for k, v in self.m.items()},
                "v": {k: _arr(v) for k, v in self.v.items()}}

    def load(self, state):
        self.t = state["t"]
        self.m = {k: _unarr(v) for k, v in state["m"].items()}
        self.v = {k: _unarr(v) for k, v in state["v"].items()}


def _arr(a):
    a = np.asarray(a)
    return {"shape": list(a.shape), "values": a.reshape(-1).tolist()}


def _unarr(d):
    return np.array(d["values"], dtype=np.float64).reshape(d["shape"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _unjsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _unjsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjsonable(v) for v in obj]
    return obj


@dataclass
class StepResult:
    d_loss: float
    losses: dict
    augmented: bool
    lam: float | None = None
    margin_stat: float | None = None
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, row):
        if self.rows and row["iteration"] <= self.rows[-1]["iteration"]:
            raise ValueError("metric rows must be strictly increasing in iteration")
        for key, value in row.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise FloatingPointError(f"non-finite {key}={value} at iteration {row['iteration']}")
        self.rows.append(row)


class Trainer:
    """Owns the full training state of one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg.validate()
        master = RngStream(cfg.seed)
        self.gen = Generator(master.substream("init_g"), cfg.width)
        self.disc = Discriminator(master.substream("init_d"), cfg.width)
        self.phi = ContentExtractor(cfg.phi, cfg.phi_seed, cfg.width)
        self.opt_g = Adam(self.gen.named_parameters(), cfg.lr, (cfg.beta1, cfg.beta2))
        self.opt_d = Adam(self.disc.named_parameters(), cfg.lr, (cfg.beta1, cfg.beta2))
        self.rngs = {name: master.substream(name) for name in _STREAMS}
        self.mix_cfg = MixWeightConfig(cfg.alpha, cfg.augment_probability)
        self.tracker = MarginTracker(0.0, cfg.momentum, cfg.margin_rule)
        self.iteration = 0
        self.augmented_steps = 0
        self.margin_log = []
        self._reset_window()
        self._build_data()

    # -- data -----------------------------------------------------------------
    def _build_data(self):
        cfg = self.cfg
        src = data_mod.generate_domain("filled", cfg.n_train, cfg.seed)
        tgt = data_mod.generate_domain("outline", cfg.n_train, cfg.seed)
        src = data_mod.data_budget(src, cfg.data_fraction, cfg.seed)
        # a different subsample seed keeps the two domains unpaired
        tgt = data_mod.data_budget(tgt, cfg.data_fraction, cfg.seed + 7919)
        self.train_x = data_mod.stack_images(src)
        if cfg.content_target == "paired":
            twins = data_mod.generate_domain("outline", cfg.n_train, cfg.seed)
            self.train_t = np.stack([twins[s.index].image.data for s in src])
        else:
            self.train_t = self.train_x
        self.train_y = data_mod.stack_images(tgt)
        with no_grad():
            self.train_t_feats = self.phi(Tensor(self.train_t)).data
        test_x = data_mod.generate_domain("filled", cfg.n_test, cfg.seed, start=cfg.n_train)
        test_y = data_mod.generate_domain("outline", cfg.n_test, cfg.seed, start=cfg.n_train)
        self.test_x = data_mod.stack_images(test_x)
        self.test_y = data_mod.stack_images(test_y)
        self.test_y_stats = FeatureStats.from_features(self.phi.pooled(self.test_y))

    def sample_indices(self):
        r = self.rngs["batch"]
        n = self.cfg.batch_size
        i1 = r.choice(len(self.train_x), n, replace=False)
        i2 = r.choice(len(self.train_x), n, replace=False)
        ir = r.choice(len(self.train_y), n, replace=False)
        return i1, i2, ir

    # -- forward helpers --------------------------------------------------------
    def _augmented_output(self, x1, x2, lam):
        if self.cfg.mix_at == "input":
            return self.gen.decode(self.gen.encode(mix_features(x1, x2, lam)))
        e1, e2 = self.gen.encode(x1), self.gen.encode(x2)
        return self.gen.decode(mix_features(e1, e2, lam))

    def draw_plan(self):
        """Gate, mixing weight and derangement for one iteration (None if not augmented)."""
        cfg = self.cfg
        if cfg.scheme == "none" or not should_augment(cfg.augment_probability, self.rngs["gate"]):
            return None
        if cfg.lambda_per_item:
            _, lam = draw_mix_weight(self.mix_cfg, self.rngs["mix"], size=cfg.batch_size)
        else:
            _, lam = draw_mix_weight(self.mix_cfg, self.rngs["mix"])
        perm = derangement_permutation(cfg.batch_size, self.rngs["perm"])
        return lam, perm

    # -- steps ------------------------------------------------------------------
    def train_step_discriminator(self, real, fake):
        """One Adam step on the discriminator loss; ``fake`` carries no graph."""
        self.opt_d.zero_grad()
        loss = adversarial_loss_discriminator(self.disc(Tensor(real)), self.disc(Tensor(fake)))
        backward(loss)
        self.opt_d.step()
        return loss.item()

    def generator_losses(self, i1, i2, plan):
        """Loss bundle for the generator step plus the values the margin needs."""
        cfg = self.cfg
        x1 = Tensor(self.train_x[i1])
        ft1 = Tensor(self.train_t_feats[i1])
        extra = {}
        if plan is None:
            s = self.gen(x1)
            content = mean(content_distance_per_item(self.phi(s), ft1))
            gan = adversarial_loss_generator(self.disc(s))
            return LossBundle.combine(gan, content, cfg.w_gan, cfg.w_content), extra
        lam, perm = plan
        x2 = Tensor(self.train_x[i2])
        s_prime = self._augmented_output(x1, x2, lam)
        f_s = self.phi(s_prime)
        gan = adversarial_loss_generator(self.disc(s_prime))
        if cfg.scheme == "remix":
            ft2 = Tensor(self.train_t_feats[i2])
            d1 = content_distance_per_item(f_s, ft1)
            d2 = content_distance_per_item(f_s, ft2)
            l_p, l_n = relative_content_loss(d1, d2, self.tracker.a_bar)
            content = l_p + l_n
            extra = {"f_s": f_s.data, "t2_feats": ft2.data, "perm": perm, "d1": d1.data, "d2": d2.data,
                     "l_p": l_p.item(), "l_n": l_n.item()}
        else:
            est = estimate_target(cfg.scheme, Tensor(self.train_t[i1]), Tensor(self.train_t[i2]), lam,
                                  (cfg.lsr_lo, cfg.lsr_hi))
            with no_grad():
                f_t = self.phi(est.value)
            content = mean(content_distance_per_item(f_s, Tensor(f_t.data)))
        extra["s_prime"] = s_prime.data
        return LossBundle.combine(gan, content, cfg.w_gan, cfg.w_content), extra

    def train_step_generator(self, i1, i2, plan):
        self.opt_g.zero_grad()
        bundle, extra = self.generator_losses(i1, i2, plan)
        backward(bundle.total)
        self.opt_g.step()
        margin_stat = None
        if plan is not None and self.cfg.scheme == "remix":
            # computed from the pre-update forward pass, after the parameter step
            margin_stat = margin_batch_statistic(extra["f_s"], extra["t2_feats"], extra["perm"])
            self.tracker = margin_update(self.tracker, margin_stat)
            self.margin_log.append(margin_stat)
        return bundle, extra, margin_stat

    def step(self):
        """One iteration: draw, D step, G step."""
        i1, i2, ir = self.sample_indices()
        plan = self.draw_plan()
        with no_grad():
            if plan is None:
                fake = self.gen(Tensor(self.train_x[i1])).data
            else:
                fake = self._augmented_output(Tensor(self.train_x[i1]), Tensor(self.train_x[i2]), plan[0]).data
        d_loss = self.train_step_discriminator(self.train_y[ir], fake)
        bundle, extra, margin_stat = self.train_step_generator(i1, i2, plan)
        self.iteration += 1
        values = bundle.values()
        if not all(math.isfinite(v) for v in list(values.values()) + [d_loss]):
            raise FloatingPointError(f"non-finite loss at iteration {self.iteration}: d={d_loss}, g={values}")
        if plan is not None:
            self.augmented_steps += 1
            self.window["augmented"] += 1
        w = self.window
        w["steps"] += 1
        w["d_loss"] += d_loss
        w["g_gan"] += values["gan"]
        w["g_content"] += values["content"]
        w["g_total"] += values["total"]
        lam = None
        if plan is not None:
            lam = float(np.mean(plan[0]))
        return StepResult(d_loss, values, plan is not None, lam, margin_stat, extra.get("d1"), extra.get("d2"))

    # -- evaluation -------------------------------------------------------------
    def _reset_window(self):
        self.window = {"steps": 0, "augmented": 0, "d_loss": 0.0, "g_gan": 0.0, "g_content": 0.0, "g_total": 0.0}

    def translate(self, images, chunk=64):
        outs = []
        with no_grad():
            for start in range(0, len(images), chunk):
                outs.append(self.gen(Tensor(images[start:start + chunk])).data)
        return np.concatenate(outs)

    def evaluate(self):
        out = self.translate(self.test_x)
        stats = FeatureStats.from_features(self.phi.pooled(out))
        return {
            "frechet": frechet_distance(stats, self.test_y_stats),
            "diversity": diversity_score(out, self.phi),
            "content_error": content_error(out, self.test_y, self.phi),
        }

    def metrics_row(self, kind):
        row = {"iteration": self.iteration, "kind": kind}
        row.update(self.evaluate())
        w = self.window
        k = max(w["steps"], 1)
        row.update({
            "d_loss": w["d_loss"] / k, "g_gan": w["g_gan"] / k, "g_content": w["g_content"] / k,
            "g_total": w["g_total"] / k, "a_bar": self.tracker.a_bar,
            "augmented_steps": w["augmented"], "window_steps": w["steps"],
        })
        self._reset_window()
        return row

    # -- checkpointing ----------------------------------------------------------
    def state_dict(self):
        return {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "iteration": self.iteration,
            "augmented_steps": self.augmented_steps,
            "generator": {n: _arr(p.data) for n, p in self.gen.named_parameters()},
            "discriminator": {n: _arr(p.data) for n, p in self.disc.named_parameters()},
            "adam_g": self.opt_g.state(),
            "adam_d": self.opt_d.state(),
            "margin": self.tracker.state(),
            "margin_log": list(self.margin_log),
            "rng": {k: _jsonable(r.state()) for k, r in self.rngs.items()},
            "window": dict(self.window),
        }

    def load_state_dict(self, state):
        if state.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {state.get('version')!r}")
        for module, key in ((self.gen, "generator"), (self.disc, "discriminator")):
            saved = state[key]
            if set(saved) != set(module.params):
                raise ValueError(f"checkpoint {key} parameters do not match the model")
            for n, p in module.named_parameters():
                value = _unarr(saved[n])
                if value.shape != p.shape:
                    raise ValueError(f"checkpoint {key}.{n} has shape {value.shape}, model has {p.shape}")
                p.data = value
        self.opt_g.load(state["adam_g"])
        self.opt_d.load(state["adam_d"])
        self.tracker = MarginTracker(**state["margin"])
        self.margin_log = list(state["margin_log"])
        self.rngs = {k: RngStream.from_state(_unjsonable(v)) for k, v in state["rng"].items()}
        self.iteration = state["iteration"]
        self.augmented_steps = state["augmented_steps"]
        self.window = dict(state["window"])

    def save_checkpoint(self, path, report=None):
        state = self.state_dict()
        if report is not None:
            state["rows"] = report.rows
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(state))
        tmp.replace(path)

    @classmethod
    def from_checkpoint(cls, path, cfg=None):
        """Rebuild a trainer from a checkpoint; ``cfg`` may extend ``iterations``/``output_dir``."""
        state = load_checkpoint(path)
        saved = ExperimentConfig(**state["config"])
        if cfg is None:
            cfg = saved
        trainer = cls(cfg)
        trainer.load_state_dict(state)
        return trainer, state.get("rows", [])


def load_checkpoint(path):
    path = Path(path)
    try:
        state = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(state, dict) or "generator" not in state:
        raise ValueError(f"unreadable checkpoint {path}: missing generator parameters")
    return state


def _fmt(value):
    return repr(value) if isinstance(value, float) else str(value)


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# remixgan metrics v{CSV_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    out = []
    for r in rows:
        out.append({k: (v if k == "kind" else (int(v) if k in ("iteration", "augmented_steps", "window_steps") else float(v)))
                    for k, v in r.items()})
    return out


def run_experiment(cfg, resume=None, progress=True):
    """Train to ``cfg.iterations``, evaluating on the held-out set along the way.

    Writes ``metrics.csv``, ``metrics.json``, ``progress.jsonl``,
    ``config.yaml`` and ``checkpoint.json`` to ``cfg.output_dir``. With
    ``resume`` the run continues from a checkpoint written by an earlier call
    with the same settings.
    """
    cfg = cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_flat(), sort_keys=False))
    report = MetricsReport()
    if resume is not None:
        trainer, rows = Trainer.from_checkpoint(resume, cfg)
        for row in rows:
            report.add(row)
        mode = "a"
    else:
        trainer = Trainer(cfg)
        report.add(trainer.metrics_row("init"))
        mode = "w"
    t0 = time.perf_counter()
    with open(out / "progress.jsonl", mode) as plog:
        while trainer.iteration < cfg.iterations:
            res = trainer.step()
            plog.write(json.dumps({
                "iteration": trainer.iteration, "d_loss": res.d_loss, **{f"g_{k}": v for k, v in res.losses.items()},
                "a_bar": trainer.tracker.a_bar, "augmented": res.augmented,
            }) + "\n")
            it = trainer.iteration
            if it == cfg.iterations:
                report.add(trainer.metrics_row("final"))
            elif cfg.eval_every and it % cfg.eval_every == 0:
                report.add(trainer.metrics_row("eval"))
            if cfg.checkpoint_every and it % cfg.checkpoint_every == 0 and it < cfg.iterations:
                trainer.save_checkpoint(out / f"checkpoint_{it:06d}.json", report)
            if progress and it % 500 == 0:
                log.info("iter %d  d=%.4f  g=%.4f  a_bar=%.4f", it, res.d_loss, res.losses["total"], trainer.tracker.a_bar)
    trainer.save_checkpoint(out / "checkpoint.json", report)
    last = report.rows[-1]
    report.summary = {
        "scheme": cfg.scheme, "seed": cfg.seed, "data_fraction": cfg.data_fraction,
        "iterations": trainer.iteration, "frechet": last["frechet"], "diversity": last["diversity"],
        "content_error": last["content_error"], "a_bar": trainer.tracker.a_bar,
        "margin_rule": cfg.margin_rule, "augmented_steps": trainer.augmented_steps,
        "augmented_fraction": trainer.augmented_steps / trainer.iteration if trainer.iteration else 0.0,
        "backend": _backend_name(), "train_seconds": time.perf_counter() - t0,
    }
    write_metrics_csv(out / "metrics.csv", report.rows)
    (out / "metrics.json").write_text(json.dumps({"rows": report.rows, "summary": report.summary}, indent=2))
    return report


def _backend_name():
    from . import kernels
    return kernels.BACKEND

"""Adversarial training loop: Adam, linear learning-rate decay, the
D-then-G update schedule, TSV logging and bit-exact checkpointing."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arch, checkpoint, data, degrade
from . import loss as L
from . import tensorops as T
from .tensorops import BatchNormState, Tensor


@dataclass
class TrainConfig:
    epochs: int = 200
    base_lr: float = 5e-4
    batch_size: int = 32
    patch: int = 64
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    median_k: int = 5
    data_seed: int = 0
    init_seed: int = 1
    artifact_seed: int = 2
    checkpoint_every: int = 10
    n_patches_per_pair: int = 4
    augment: bool = True

    def problems(self):
        """All validation failures, one message per bad field."""
        msgs = []
        if self.epochs < 1:
            msgs.append(f"epochs must be >= 1, got {self.epochs}")
        if self.base_lr <= 0:
            msgs.append(f"base_lr must be > 0, got {self.base_lr}")
        if self.batch_size < 2:
            msgs.append(f"batch_size must be >= 2 (batch norm needs a batch), "
                        f"got {self.batch_size}")
        if self.patch < 2 or self.patch % 2:
            msgs.append(f"patch must be even and >= 2, got {self.patch}")
        if self.median_k < 1 or self.median_k % 2 == 0:
            msgs.append(f"median_k must be odd and positive, got {self.median_k}")
        if self.checkpoint_every < 1:
            msgs.append(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.n_patches_per_pair < 1:
            msgs.append(f"n_patches_per_pair must be >= 1, got {self.n_patches_per_pair}")
        return msgs

    def validate(self):
        msgs = self.problems()
        if msgs:
            raise ValueError("invalid training config: " + "; ".join(msgs))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "weights" in d:
            d["weights"] = L.LossWeights(**d["weights"])
        return cls(**d)


class NonFiniteError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    """Per-parameter Adam moments, keyed by parameter name."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: arch.ModelParams, state: OptimizerState, lr: float):
    """Bias-corrected Adam update, in place; rejects non-finite gradients."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear decay from base_lr down to base_lr/epochs at the last epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} out of range [0, {cfg.epochs})")
    return cfg.base_lr - epoch * (cfg.base_lr / cfg.epochs)


def gan_step(batch: data.PatchBatch, g_params, g_bn, d_params, d_bn,
             g_state: OptimizerState, d_state: OptimizerState,
             g_cfg: arch.GeneratorConfig, d_cfg: arch.DiscriminatorConfig,
             cfg: TrainConfig, extractor: L.ContentExtractor, lr: float):
    """One discriminator update then one generator update on a batch.

    Returns scalar loss components for logging; the logged total is
    recomputed in float64 as the exact dot product of weights and
    components.
    """
    med = batch.medians.data
    g_in = Tensor(arch.scaled_residual(batch.corrupted.data, med))
    real_res = Tensor(batch.clean.data - med)

    # discriminator step; fake residuals detached so no gradient reaches G
    fake_res = arch.generator_forward(g_in, g_params, g_cfg, "train", g_bn)
    d_real = arch.discriminator_forward(real_res, d_params, d_cfg, "train", d_bn)
    d_fake = arch.discriminator_forward(fake_res.detach(), d_params, d_cfg,
                                        "train", d_bn)
    d_loss, _ = L.adversarial_losses(d_real, d_fake)
    _require_finite(d_loss, "d_loss", batch)
    T.backward(d_loss, d_params)
    adam_step(d_params, d_state, lr)

    # generator step against the updated discriminator
    d_fake_g = arch.discriminator_forward(fake_res, d_params, d_cfg, "train", d_bn)
    _, g_adv = L.adversarial_losses(d_fake_g.detach(), d_fake_g)
    t_hat = batch.medians + fake_res
    pix = L.pixel_loss(t_hat, batch.clean)
    grad = L.gradient_loss(t_hat, batch.clean)
    perc = L.perceptual_loss(t_hat, batch.clean, extractor)
    total = L.total_loss((pix, grad, perc, g_adv), cfg.weights)
    _require_finite(total, "total generator loss", batch)
    T.backward(total, g_params)
    adam_step(g_params, g_state, lr)

    comps = {
        "pixel": float(pix.item()),
        "gradient": float(grad.item()),
        "perceptual": float(perc.item()),
        "adv_g": float(g_adv.item()),
        "adv_d": float(d_loss.item()),
    }
    w = cfg.weights
    comps["total"] = (w.w1 * comps["pixel"] + w.w2 * comps["gradient"]
                      + w.w3 * comps["perceptual"] + w.w4 * comps["adv_g"])
    return comps


def _require_finite(scalar, what, batch):
    if not np.isfinite(scalar.data).all():
        raise NonFiniteError(
            f"{what} is non-finite; batch stats: corrupted "
            f"[{batch.corrupted.data.min():.3g}, {batch.corrupted.data.max():.3g}]")


LOG_HEADER = "step\tepoch\tlr\tpixel\tgradient\tperceptual\tadv_g\tadv_d\ttotal\n"


def _log_row(step, epoch, lr, comps):
    vals = [comps[k] for k in ("pixel", "gradient", "perceptual", "adv_g",
                               "adv_d", "total")]
    return f"{step}\t{epoch}\t{lr!r}\t" + "\t".join(repr(v) for v in vals) + "\n"


# -- checkpointing --


def _bn_entries(prefix, bn):
    out = []
    for name in sorted(bn):
        st = bn[name]
        out.append((f"{prefix}.{name}.mean", st.mean.reshape(1, -1, 1, 1)))
        out.append((f"{prefix}.{name}.var", st.var.reshape(1, -1, 1, 1)))
    return out


def _opt_entries(prefix, state: OptimizerState):
    out = [(f"{prefix}.step", np.full((1, 1, 1, 1), float(state.step)))]
    for name in state.m:
        out.append((f"{prefix}.m.{name}", state.m[name]))
        out.append((f"{prefix}.v.{name}", state.v[name]))
    return out


def save_checkpoint(path, g_params, g_bn, d_params, d_bn, g_state, d_state,
                    g_cfg: arch.GeneratorConfig, cfg: TrainConfig, epoch: int):
    entries = [("meta.epoch", np.full((1, 1, 1, 1), float(epoch))),
               ("meta.median_k", np.full((1, 1, 1, 1), float(cfg.median_k))),
               ("meta.base_channels", np.full((1, 1, 1, 1), float(g_cfg.base_channels))),
               ("meta.attention_reduction",
                np.full((1, 1, 1, 1), float(g_cfg.attention_reduction))),
               ("meta.dilations",
                np.array(g_cfg.dilations, dtype=np.float64).reshape(1, 1, 1, -1))]
    entries += [(f"g.{n}", t.data) for n, t in g_params.items()]
    entries += [(f"d.{n}", t.data) for n, t in d_params.items()]
    entries += _bn_entries("gbn", g_bn) + _bn_entries("dbn", d_bn)
    entries += _opt_entries("gopt", g_state) + _opt_entries("dopt", d_state)
    checkpoint.write_tensors(path, entries)


def load_checkpoint(path, g_params, g_bn, d_params=None, d_bn=None,
                    g_state=None, d_state=None):
    """Restore state in place; returns the stored epoch.

    Generator entries are mandatory. Discriminator/optimizer entries are
    restored only when the matching holders are passed (inference needs
    just the generator).
    """
    table = dict(checkpoint.read_tensors(path))
    if "meta.epoch" not in table:
        raise checkpoint.CheckpointError(f"{path}: missing meta records")
    _load_params("g", g_params, table)
    _load_bn("gbn", g_bn, table, path)
    if d_params is not None:
        _load_params("d", d_params, table)
        _load_bn("dbn", d_bn, table, path)
    for prefix, state, params in (("gopt", g_state, g_params),
                                  ("dopt", d_state, d_params)):
        if state is None:
            continue
        state.step = int(table[f"{prefix}.step"].reshape(()))
        for name, _ in params.items():
            if f"{prefix}.m.{name}" in table:
                state.m[name] = table[f"{prefix}.m.{name}"].copy()
                state.v[name] = table[f"{prefix}.v.{name}"].copy()
    return int(table["meta.epoch"].reshape(()))


def read_generator_config(path):
    """Generator architecture and median kernel stored in a checkpoint."""
    table = dict(checkpoint.read_tensors(path))
    dil = tuple(int(v) for v in table["meta.dilations"].ravel())
    g_cfg = arch.GeneratorConfig(
        base_channels=int(table["meta.base_channels"].reshape(())),
        n_res_blocks=len(dil),
        dilations=dil,
        attention_reduction=int(table["meta.attention_reduction"].reshape(())),
    )
    return g_cfg, int(table["meta.median_k"].reshape(()))


def _load_params(prefix, params, table):
    for name, t in params.items():
        key = f"{prefix}.{name}"
        if key not in table:
            raise checkpoint.CheckpointError(f"checkpoint missing record {key!r}")
        arr = table[key]
        if arr.shape != t.data.shape:
            raise checkpoint.CheckpointError(
                f"record {key!r} shape {arr.shape} != parameter {t.data.shape}")
        t.data = arr.copy()


def _load_bn(prefix, bn, table, path):
    for name, st in bn.items():
        try:
            st.mean = table[f"{prefix}.{name}.mean"].ravel().copy()
            st.var = table[f"{prefix}.{name}.var"].ravel().copy()
        except KeyError as exc:
            raise checkpoint.CheckpointError(
                f"{path}: missing BN record for {name!r}") from exc


# -- full loop --


def train(pairs, cfg: TrainConfig, out_dir, resume=None, d_cfg=None,
          progress=None):
    """Train on ImagePairs; writes checkpoints and log.tsv under out_dir.

    Resuming from a checkpoint reproduces the uninterrupted trajectory
    bit-exactly: every epoch's batches derive from (data_seed, epoch)
    alone, and all optimizer/BN state rides in the checkpoint.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g_cfg = arch.GeneratorConfig()
    if d_cfg is None:
        d_cfg = arch.DiscriminatorConfig.reduced_for_patch(cfg.patch)
    g_params, g_bn = arch.generator_init(g_cfg, cfg.init_seed)
    d_params, d_bn = arch.discriminator_init(d_cfg, cfg.init_seed + 1)
    g_state, d_state = OptimizerState(), OptimizerState()
    extractor = L.ContentExtractor.fixed_random(seed=0, dtype=np.float32)

    start_epoch = 0
    log_path = out_dir / "log.tsv"
    if resume is not None:
        start_epoch = load_checkpoint(resume, g_params, g_bn, d_params, d_bn,
                                      g_state, d_state) + 1
    if start_epoch == 0 or not log_path.exists():
        log_path.write_text(LOG_HEADER)

    if len(pairs) * cfg.n_patches_per_pair < cfg.batch_size:
        raise ValueError(
            f"{len(pairs)} pairs x {cfg.n_patches_per_pair} patches cannot "
            f"fill one batch of {cfg.batch_size}")

    step = g_state.step
    final = out_dir / "final.frck"
    with open(log_path, "a") as log:
        for epoch in range(start_epoch, cfg.epochs):
            comps = None
            lr = lr_at(epoch, cfg)
            for batch in data.batches(pairs, cfg.batch_size, cfg.patch,
                                      data._mix(cfg.data_seed, epoch, 0),
                                      cfg.n_patches_per_pair, cfg.median_k,
                                      augment_patches=cfg.augment):
                comps = gan_step(batch, g_params, g_bn, d_params, d_bn,
                                 g_state, d_state, g_cfg, d_cfg, cfg,
                                 extractor, lr)
                step += 1
                log.write(_log_row(step, epoch, lr, comps))
                for name, t in list(g_params.items()) + list(d_params.items()):
                    if not np.all(np.isfinite(t.data)):
                        raise NonFiniteError(f"parameter {name!r} became non-finite")
            if progress is not None and comps is not None:
                progress(epoch, comps)
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1:
                save_checkpoint(out_dir / f"epoch{epoch:04d}.frck", g_params,
                                g_bn, d_params, d_bn, g_state, d_state,
                                g_cfg, cfg, epoch)
    save_checkpoint(final, g_params, g_bn, d_params, d_bn, g_state, d_state,
                    g_cfg, cfg, cfg.epochs - 1)
    return g_params, g_bn, g_cfg

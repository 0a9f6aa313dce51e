"""Three-phase training: global modal learning, mode-shape learning, full
objective with uncertainty terms.

Phase 1 optimizes only the evidential regression losses, phase 2 adds the
mode-shape similarity term with higher-order emphasis, and phase 3 activates
the orthogonality, calibration and KL terms under warm-up schedules.  AdamW
runs with separate backbone/head learning rates under a cosine schedule with
warm restarts; SWAG snapshots are collected over the closing epochs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import GraphSample
from .losses import LossWeights, mac_loss, total_loss
from .model import (
    BaselineGNN,
    ModalVGAE,
    ModelConfig,
    build_baseline,
    build_model,
    log_targets,
    sample_tensors,
)
from .uq import SWAGPosterior, collect_state, swag_collect
from .util import stream_seed

CKPT_VERSION = 1
HEAD_PREFIXES = ("head_freq", "head_zeta")


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: tuple[int, int, int] = (30, 30, 40)
    batch_size: int = 8
    accum_steps: int = 4
    lr_backbone: float = 1e-3
    lr_heads: float = 2e-3
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    kl_warmup: int = 20  # epochs, from phase-3 start
    evi_warmup: int = 10  # epochs, from training start
    crps_delay: int = 10  # epochs into phase 3
    cosine_t0: int = 25
    cosine_t_mult: float = 2.0
    lr_min_frac: float = 0.05
    swag_last: int = 15
    swag_interval: int = 1
    feature_jitter: float = 0.0  # train-time Gaussian noise on normalized features
    seed: int = 0
    deterministic: bool = True

    @property
    def total_epochs(self) -> int:
        return sum(self.epochs)

    def validate(self) -> None:
        if any(e < 1 for e in self.epochs):
            raise ValueError("every phase needs at least one epoch")
        if self.batch_size < 1 or self.accum_steps < 1 or self.cosine_t0 < 1:
            raise ValueError("counts must be >= 1")
        if min(self.kl_warmup, self.evi_warmup, self.crps_delay, self.swag_last) < 0:
            raise ValueError("warm-up lengths must be >= 0")
        if self.lr_backbone <= 0 or self.lr_heads <= 0 or self.clip_norm <= 0:
            raise ValueError("learning rates and clip norm must be positive")
        if not 0.0 <= self.lr_min_frac < 1.0:
            raise ValueError("lr_min_frac must be in [0, 1)")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["epochs"] = list(self.epochs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["epochs"] = tuple(d["epochs"])
        return cls(**d)


@dataclass
class ScheduleState:
    epoch: int = 0
    step: int = 0
    phase: int = 3
    kl_mult: float = 1.0
    evi_mult: float = 1.0
    crps_mult: float = 1.0
    lr_scale: float = 1.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def warmup_multiplier(epoch: float, start: float, length: float) -> float:
    """0 before ``start``, linear ramp over ``length`` epochs, then 1."""
    if length < 0:
        raise ValueError("length must be >= 0")
    if epoch < start:
        return 0.0
    if length == 0:
        return 1.0
    return min(1.0, (epoch - start) / length)


def cosine_warm_restart_lr(t: float, lr_max: float, lr_min: float,
                           t0: float, t_mult: float = 2.0) -> float:
    """Cosine annealing with warm restarts; window length grows by t_mult."""
    if t0 <= 0 or t_mult < 1.0:
        raise ValueError("need t0 > 0 and t_mult >= 1")
    ti = float(t0)
    t = float(t)
    while t >= ti:
        t -= ti
        ti *= t_mult
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / ti))


def schedule_at(epoch: int, cfg: TrainConfig) -> ScheduleState:
    p1, p2, _ = cfg.epochs
    phase = 1 if epoch < p1 else 2 if epoch < p1 + p2 else 3
    return ScheduleState(
        epoch=epoch,
        phase=phase,
        kl_mult=warmup_multiplier(epoch, p1 + p2, cfg.kl_warmup),
        evi_mult=warmup_multiplier(epoch, 0, cfg.evi_warmup),
        crps_mult=warmup_multiplier(epoch, p1 + p2 + cfg.crps_delay, 0),
        lr_scale=cosine_warm_restart_lr(epoch, 1.0, cfg.lr_min_frac, cfg.cosine_t0, cfg.cosine_t_mult),
    )


def clip_gradients(grads: list[torch.Tensor], max_norm: float):
    """Scale gradients so the global L2 norm is at most ``max_norm``.

    Returns (clipped gradients, original norm); direction is preserved.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = math.sqrt(sum(float(g.detach().pow(2).sum()) for g in grads))
    if total <= max_norm or total == 0.0:
        return [g.clone() for g in grads], total
    scale = max_norm / total
    return [g * scale for g in grads], total


class AdamW:
    """Decoupled-weight-decay Adam over named parameters.

    Parameters whose name starts with a head prefix use the head learning
    rate; everything else uses the backbone rate.  Both are scaled by the
    cosine multiplier each step.
    """

    def __init__(self, named_params: dict[str, torch.Tensor], cfg: TrainConfig,
                 betas=(0.9, 0.999), eps: float = 1e-8, single_group: bool = False):
        self.params = named_params
        self.cfg = cfg
        self.betas = betas
        self.eps = eps
        self.single_group = single_group
        self.step_count = 0
        self.m = {k: torch.zeros_like(v) for k, v in named_params.items()}
        self.v = {k: torch.zeros_like(v) for k, v in named_params.items()}

    def lr_for(self, name: str) -> float:
        if not self.single_group and name.startswith(HEAD_PREFIXES):
            return self.cfg.lr_heads
        return self.cfg.lr_backbone

    @torch.no_grad()
    def step(self, grads: dict[str, torch.Tensor], lr_scale: float = 1.0) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if not torch.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for {name!r}")
            lr = self.lr_for(name) * lr_scale
            if self.cfg.weight_decay:
                p.mul_(1.0 - lr * self.cfg.weight_decay)
            m, v = self.m[name], self.v[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(self.eps), value=-lr)


def optimizer_step(optimizer: AdamW, grads: dict[str, torch.Tensor], lr_scale: float = 1.0) -> None:
    optimizer.step(grads, lr_scale)


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state: dict[str, np.ndarray]
    kind: str = "vgae"  # or "baseline"
    schedule: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    swag: dict[str, np.ndarray] | None = None

    def build(self) -> torch.nn.Module:
        model = (build_model if self.kind == "vgae" else build_baseline)(self.model_config)
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.state.items()})
        model.eval()
        return model

    def swag_posterior(self) -> SWAGPosterior | None:
        if not self.swag:
            return None
        mean = {k[len("swag_mean/"):]: v for k, v in self.swag.items() if k.startswith("swag_mean/")}
        var = {k[len("swag_var/"):]: v for k, v in self.swag.items() if k.startswith("swag_var/")}
        if not mean:
            return None
        return SWAGPosterior(mean=mean, var=var,
                             n_snapshots=int(self.metrics.get("swag_snapshots", 2)))


def save_checkpoint(prefix, ckpt: Checkpoint) -> None:
    """Write ``<prefix>.json`` (manifest) and ``<prefix>.bin`` (f32 payload)."""
    prefix = Path(prefix)
    entries = []
    blobs = []
    offset = 0
    named = dict(ckpt.state)
    if ckpt.swag:
        named.update(ckpt.swag)
    for name, arr in named.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.asarray(arr).shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    manifest = {
        "version": CKPT_VERSION,
        "kind": ckpt.kind,
        "model_config": ckpt.model_config.to_dict(),
        "params": entries,
        "n_state": len(ckpt.state),
        "schedule": ckpt.schedule,
        "metrics": ckpt.metrics,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    prefix.with_suffix(".bin").write_bytes(payload)


def load_checkpoint(prefix, expected_config: ModelConfig | None = None) -> Checkpoint:
    prefix = Path(prefix)
    try:
        manifest = json.loads(prefix.with_suffix(".json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing checkpoint manifest {prefix}.json") from exc
    if manifest.get("version") != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {manifest.get('version')} != {CKPT_VERSION}")
    payload = prefix.with_suffix(".bin").read_bytes()
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError("checkpoint payload truncated")
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError("checkpoint payload digest mismatch")

    cfg = ModelConfig.from_dict(manifest["model_config"])
    if expected_config is not None and cfg != expected_config:
        diffs = [
            f"{k}: checkpoint={getattr(cfg, k)!r} expected={getattr(expected_config, k)!r}"
            for k in cfg.__dataclass_fields__
            if getattr(cfg, k) != getattr(expected_config, k)
        ]
        raise CheckpointError("model config mismatch: " + "; ".join(diffs))

    arrays = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(shape).copy()
    n_state = manifest["n_state"]
    names = [e["name"] for e in manifest["params"]]
    state = {n: arrays[n] for n in names[:n_state]}
    swag = {n: arrays[n] for n in names[n_state:]} or None
    return Checkpoint(model_config=cfg, state=state, kind=manifest["kind"],
                      schedule=manifest["schedule"], metrics=manifest["metrics"], swag=swag)


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    swag: SWAGPosterior | None
    log: list[dict]


def _prepared(samples: list[GraphSample]):
    return [(sample_tensors(s), log_targets(s)) for s in samples]


def validation_metric(model: ModalVGAE, prepared, weights: LossWeights) -> tuple[float, dict]:
    """Full objective (all terms, warm-ups at cap) with the mean latent."""
    sched = ScheduleState(phase=3, kl_mult=1.0, evi_mult=1.0, crps_mult=1.0)
    totals, terms_acc = [], {}
    model.eval()
    with torch.no_grad():
        for (x, edges), targets in prepared:
            out = model(x, edges, mode="mean")
            tot, bd = total_loss(out, targets, weights, sched)
            totals.append(float(tot))
            for k, v in bd.terms.items():
                terms_acc.setdefault(k, []).append(v)
    model.train()
    return float(np.mean(totals)), {k: float(np.mean(v)) for k, v in terms_acc.items()}


def _load_init_state(model: torch.nn.Module, init_state) -> None:
    model.load_state_dict(
        {k: torch.from_numpy(np.asarray(v, dtype=np.float32).copy()) for k, v in init_state.items()}
    )


def train(
    train_samples: list[GraphSample],
    val_samples: list[GraphSample],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    weights: LossWeights = LossWeights(),
    init_state: dict[str, np.ndarray] | None = None,
) -> TrainResult:
    """Run the three phases and return best/final checkpoints plus SWAG."""
    cfg.validate()
    weights.validate()
    if not train_samples or not val_samples:
        raise ValueError("train and validation splits must be non-empty")
    if cfg.deterministic:
        torch.manual_seed(cfg.seed)

    model = build_model(model_cfg, seed=cfg.seed)
    if init_state is not None:
        _load_init_state(model, init_state)
    model.train()
    params = dict(model.named_parameters())
    opt = AdamW({k: v.data for k, v in params.items()}, cfg)
    prepared_train = _prepared(train_samples)
    prepared_val = _prepared(val_samples)
    z_gen = torch.Generator().manual_seed(stream_seed(cfg.seed, 0, 0x7A) % 2**63)

    p1, p2, p3 = cfg.epochs
    total_epochs = cfg.total_epochs
    swag_start = max(p1 + p2, total_epochs - cfg.swag_last)
    snapshots = []
    log: list[dict] = []
    best_metric, best_state, best_epoch = math.inf, None, -1

    for epoch in range(total_epochs):
        sched = schedule_at(epoch, cfg)
        order = np.random.default_rng(
            stream_seed(cfg.seed, epoch, 0x0E)
        ).permutation(len(prepared_train))
        micro = max(1, cfg.batch_size)
        pending = 0
        epoch_totals, term_acc = [], {}

        model.zero_grad(set_to_none=False)
        for start in range(0, len(order), micro):
            batch = order[start : start + micro]
            batch_loss = None
            for idx in batch:
                (x, edges), targets = prepared_train[int(idx)]
                if cfg.feature_jitter > 0:
                    x = x + cfg.feature_jitter * torch.randn(x.shape, generator=z_gen)
                out = model(x, edges, mode="sample", generator=z_gen, dropout_active=True)
                try:
                    tot, bd = total_loss(out, targets, weights, sched)
                except FloatingPointError as exc:
                    raise FloatingPointError(
                        f"epoch {epoch}, sample {train_samples[int(idx)].sample_id}: {exc}"
                    ) from exc
                batch_loss = tot if batch_loss is None else batch_loss + tot
                epoch_totals.append(bd.total)
                for k, v in bd.terms.items():
                    term_acc.setdefault(k, []).append(v)
            (batch_loss / (len(batch) * cfg.accum_steps)).backward()
            pending += 1
            if pending == cfg.accum_steps or start + micro >= len(order):
                grads = {k: p.grad for k, p in params.items() if p.grad is not None}
                clipped, _ = clip_gradients(list(grads.values()), cfg.clip_norm)
                grads = dict(zip(grads.keys(), clipped))
                opt.step(grads, lr_scale=sched.lr_scale)
                model.zero_grad(set_to_none=False)
                pending = 0

        val_total, val_terms = validation_metric(model, prepared_val, weights)
        row = {
            "epoch": epoch,
            "phase": sched.phase,
            "lr_scale": sched.lr_scale,
            "kl_mult": sched.kl_mult,
            "evi_mult": sched.evi_mult,
            "crps_mult": sched.crps_mult,
            "train_total": float(np.mean(epoch_totals)),
            "val_total": val_total,
        }
        row.update({f"train_{k}": float(np.mean(v)) for k, v in term_acc.items()})
        row.update({f"val_{k}": v for k, v in val_terms.items()})
        log.append(row)

        if sched.phase == 3 and val_total < best_metric:
            best_metric, best_state, best_epoch = val_total, collect_state(model), epoch
        if epoch >= swag_start and (epoch - swag_start) % cfg.swag_interval == 0:
            snapshots.append(collect_state(model))

    if best_state is None:  # phase 3 never improved; fall back to final weights
        best_metric, best_state, best_epoch = val_total, collect_state(model), total_epochs - 1

    posterior = swag_collect(snapshots) if len(snapshots) >= 2 else None
    swag_arrays = None
    if posterior is not None:
        swag_arrays = {f"swag_mean/{k}": v for k, v in posterior.mean.items()}
        swag_arrays.update({f"swag_var/{k}": v for k, v in posterior.var.items()})

    def make_ckpt(state, metrics):
        return Checkpoint(
            model_config=model_cfg,
            state={k: np.asarray(v, dtype=np.float32) for k, v in state.items()},
            kind="vgae",
            schedule=schedule_at(total_epochs - 1, cfg).to_dict(),
            metrics=metrics,
            swag=swag_arrays,
        )

    metrics_common = {
        "best_epoch": best_epoch,
        "best_val_total": best_metric,
        "final_val_total": log[-1]["val_total"],
        "swag_snapshots": len(snapshots),
    }
    best_ckpt = make_ckpt(best_state, metrics_common)
    final_ckpt = make_ckpt(collect_state(model), metrics_common)
    return TrainResult(best=best_ckpt, final=final_ckpt, swag=posterior, log=log)


def train_baseline(
    train_samples: list[GraphSample],
    val_samples: list[GraphSample],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    init_state: dict[str, np.ndarray] | None = None,
) -> TrainResult:
    """Single-phase point-estimate training of the comparison GNN."""
    cfg.validate()
    if cfg.deterministic:
        torch.manual_seed(cfg.seed)
    model = build_baseline(model_cfg, seed=cfg.seed)
    if init_state is not None:
        _load_init_state(model, init_state)
    model.train()
    params = dict(model.named_parameters())
    opt = AdamW({k: v.data for k, v in params.items()}, cfg, single_group=True)
    prepared_train = _prepared(train_samples)
    prepared_val = _prepared(val_samples)
    jitter_gen = torch.Generator().manual_seed(stream_seed(cfg.seed, 1, 0x7A) % 2**63)

    def sample_loss(x, edges, targets):
        log_f, log_z, phi = targets
        f_hat, z_hat, phi_hat = model(x, edges)
        return (
            torch.mean((f_hat - log_f) ** 2)
            + torch.mean((z_hat - log_z) ** 2)
            + mac_loss(phi_hat, phi)
        )

    total_epochs = cfg.total_epochs
    log = []
    best_metric, best_state, best_epoch = math.inf, None, -1
    for epoch in range(total_epochs):
        sched = schedule_at(epoch, cfg)
        order = np.random.default_rng(
            stream_seed(cfg.seed, epoch, 0xB0)
        ).permutation(len(prepared_train))
        totals = []
        model.zero_grad(set_to_none=False)
        pending = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            batch_loss = None
            for idx in batch:
                (x, edges), targets = prepared_train[int(idx)]
                if cfg.feature_jitter > 0:
                    x = x + cfg.feature_jitter * torch.randn(x.shape, generator=jitter_gen)
                loss = sample_loss(x, edges, targets)
                batch_loss = loss if batch_loss is None else batch_loss + loss
                totals.append(float(loss.detach()))
            (batch_loss / (len(batch) * cfg.accum_steps)).backward()
            pending += 1
            if pending == cfg.accum_steps or start + cfg.batch_size >= len(order):
                grads = {k: p.grad for k, p in params.items() if p.grad is not None}
                clipped, _ = clip_gradients(list(grads.values()), cfg.clip_norm)
                opt.step(dict(zip(grads.keys(), clipped)), lr_scale=sched.lr_scale)
                model.zero_grad(set_to_none=False)
                pending = 0

        model.eval()
        with torch.no_grad():
            val = float(np.mean([
                float(sample_loss(x, edges, tg)) for (x, edges), tg in prepared_val
            ]))
        model.train()
        log.append({"epoch": epoch, "train_total": float(np.mean(totals)), "val_total": val,
                    "lr_scale": sched.lr_scale, "phase": 1})
        if val < best_metric:
            best_metric, best_state, best_epoch = val, collect_state(model), epoch

    metrics = {"best_epoch": best_epoch, "best_val_total": best_metric,
               "final_val_total": log[-1]["val_total"], "swag_snapshots": 0}

    def make_ckpt(state):
        return Checkpoint(
            model_config=model_cfg,
            state={k: np.asarray(v, dtype=np.float32) for k, v in state.items()},
            kind="baseline",
            metrics=metrics,
        )

    return TrainResult(best=make_ckpt(best_state), final=make_ckpt(collect_state(model)),
                       swag=None, log=log)

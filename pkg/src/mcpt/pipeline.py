"""Two-stage training: paired contrastive pretraining, then prototype fine-tuning.

Everything random is drawn from named streams (``data``, ``augment``, ``aft``,
``init``) derived from one run seed, so a (config, seed) pair fixes every byte
of the resulting checkpoints.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import torch

from . import imaging
from .aft import token_energy
from .encoder import AuxConfig, EncoderConfig, MCPTEncoder, has_auxiliary_tensors, set_trainable
from .imaging import AugmentParams, GCDSplit, ImagePair, Sample, augment
from .mdc import DiscrepancyCurve, build_mdc_masks, compute_mdc, mean_curve
from .objectives import FinetuneLossConfig, finetune_loss, sym_loss, total_loss, unsup_loss
from .tensor import dumps_tensors, loads_tensors

log = logging.getLogger(__name__)

STREAMS = ("data", "augment", "aft", "init")


class ConfigError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DataConfig:
    image_size: int = 64
    n_pairs: int = 200
    n_classes: int = 5
    speckle: float = 0.3
    blur: float = 1.0
    gamma: float = 1.2
    mdc_bands: int = 25
    curve_source: str = "per_sample"
    old_classes: list = field(default_factory=lambda: [0, 1, 2])
    label_fraction: float = 0.5
    train_per_class: int = 40
    test_per_class: int = 20
    gcd_speckle: float = 0.1
    separable: bool = True


@dataclass
class AFTConfig:
    n_bands: int = 4
    k: int = 8
    perturb_scale: float = 0.5
    phi_hidden: int = 16


@dataclass
class FERConfig:
    router_hidden: int = 32


@dataclass
class LossConfig:
    tau: float = 0.07
    lam: float = 0.5
    tau_proto: float = 0.1
    confidence: float = 0.7


@dataclass
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-4
    lr_min: float = 1e-6
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass
class FinetuneConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.01
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 5e-5
    grad_clip: float | None = 1.0
    num_classes: int | None = None
    kmeans_iters: int = 30


@dataclass
class ScheduleConfig:
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)


@dataclass
class Ablation:
    """Component switches, each requiring the previous one (mcpt < fer < fce < mdc < ape)."""

    mcpt: bool = True
    fer: bool = True
    fce: bool = True
    mdc: bool = True
    ape: bool = True

    ORDER = ("mcpt", "fer", "fce", "mdc", "ape")
    ROWS = {
        "a": (False, False, False, False, False),
        "b": (True, False, False, False, False),
        "c": (True, True, False, False, False),
        "d": (True, True, True, False, False),
        "e": (True, True, True, True, False),
        "f": (True, True, True, True, True),
    }

    def __post_init__(self):
        flags = [getattr(self, n) for n in self.ORDER]
        for (prev, p_on), (name, on) in zip(zip(self.ORDER, flags), zip(self.ORDER[1:], flags[1:])):
            if on and not p_on:
                raise ConfigError(f"ablation flag {name!r} requires {prev!r}")

    @classmethod
    def row(cls, label: str) -> "Ablation":
        if label not in cls.ROWS:
            raise ConfigError(f"unknown ablation row {label!r}")
        return cls(*cls.ROWS[label])


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    aft: AFTConfig = field(default_factory=AFTConfig)
    fer: FERConfig = field(default_factory=FERConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    ablation: Ablation = field(default_factory=Ablation)
    seed: int = 0

    def __post_init__(self):
        if self.encoder.image_size != self.data.image_size:
            raise ConfigError("encoder.image_size must equal data.image_size")
        if self.data.curve_source not in ("per_sample", "dataset"):
            raise ConfigError(f"unknown curve_source {self.data.curve_source!r}")
        if not 0.0 <= self.loss.lam <= 1.0:
            raise ConfigError("loss.lam must be in [0, 1]")
        if self.loss.tau <= 0 or self.loss.tau_proto <= 0:
            raise ConfigError("temperatures must be positive")
        ft = self.schedule.finetune
        n_old = len(self.data.old_classes)
        if ft.num_classes is not None and self.data.n_classes > n_old and ft.num_classes < n_old + 1:
            raise ConfigError("finetune.num_classes must exceed the old-class count when new classes exist")
        if self.aft.n_bands > self.data.mdc_bands:
            raise ConfigError("aft.n_bands cannot exceed data.mdc_bands")

    def aux_config(self) -> AuxConfig:
        ab = self.ablation
        return AuxConfig(
            enabled=ab.fer,
            use_experts=ab.fce,
            n_bands=self.aft.n_bands,
            k=self.aft.k,
            perturb_scale=self.aft.perturb_scale if ab.ape else 0.0,
            phi_hidden=self.aft.phi_hidden,
            router_hidden=self.fer.router_hidden,
            partition="mdc" if ab.mdc else "uniform",
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "")


def _build(cls, d, path):
    if not isinstance(d, dict):
        raise ConfigError(f"section {path or '<root>'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys at {path or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        sub = _SECTION_TYPES.get((cls, name))
        kwargs[name] = _build(sub, value, f"{path}{name}.") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e


_SECTION_TYPES = {
    (RunConfig, "data"): DataConfig,
    (RunConfig, "encoder"): EncoderConfig,
    (RunConfig, "aft"): AFTConfig,
    (RunConfig, "fer"): FERConfig,
    (RunConfig, "loss"): LossConfig,
    (RunConfig, "schedule"): ScheduleConfig,
    (RunConfig, "ablation"): Ablation,
    (ScheduleConfig, "pretrain"): PretrainConfig,
    (ScheduleConfig, "finetune"): FinetuneConfig,
}


def apply_override(d: dict, dotted: str, value: Any) -> dict:
    """Set ``a.b.c`` in a nested dict; the path must already exist in the defaults."""
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(f"unknown config path {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config path {dotted!r}")
    node[keys[-1]] = value
    return d


def load_config(path=None, overrides: Sequence[tuple[str, Any]] = ()) -> RunConfig:
    """Defaults, then the JSON file, then overrides (later wins)."""
    base = RunConfig().to_dict()
    if path is not None:
        _merge(base, json.loads(Path(path).read_text()), "")
    for dotted, value in overrides:
        apply_override(base, dotted, value)
    return RunConfig.from_dict(base)


def _merge(base: dict, new: dict, path: str) -> None:
    for k, v in new.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path}{k}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, f"{path}{k}.")
        else:
            base[k] = v


# ---------------------------------------------------------------------------
# schedules and seeding


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step == 0:
        return lr0
    if step == total_steps:
        return lr_min
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def stream_seeds(seed: int) -> dict[str, int]:
    return {
        name: int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1, np.uint32)[0])
        for name in STREAMS
    }


def _view_seed(stream_seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([stream_seed, *keys]).generate_state(1, np.uint32)[0])


def _optimizer_groups(model, names, weight_decay):
    decay, no_decay = [], []
    for n, p in model.named_parameters():
        if n not in names:
            continue
        (decay if p.ndim >= 2 and n not in ("cls_token", "pos_embed") else no_decay).append(p)
    return [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}]


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def _chw(images: Sequence[np.ndarray], dtype) -> torch.Tensor:
    return torch.as_tensor(np.stack(images), dtype=dtype).permute(0, 3, 1, 2).contiguous()


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    tensors: "OrderedDict[str, torch.Tensor]"
    meta: dict

    def save(self, path) -> None:
        path = Path(path)
        path.write_bytes(dumps_tensors(self.tensors))
        sidecar(path).write_text(json.dumps(self.meta, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint {path} not found")
        tensors = loads_tensors(path.read_bytes())
        meta_path = sidecar(path)
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(tensors, meta)

    @property
    def model_state(self) -> "OrderedDict[str, torch.Tensor]":
        return OrderedDict((k, v) for k, v in self.tensors.items() if k != "prototypes")

    @property
    def prototypes(self) -> torch.Tensor | None:
        return self.tensors.get("prototypes")

    def config(self) -> RunConfig:
        return RunConfig.from_dict(self.meta["config"])


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _load_partial(model, state) -> None:
    own = model.state_dict()
    unknown = sorted(set(state) - set(own))
    if unknown:
        raise ConfigError(f"init checkpoint has tensors the model lacks: {unknown[:5]}")
    for k, v in state.items():
        if v.shape != own[k].shape:
            raise ConfigError(f"init tensor {k} has shape {tuple(v.shape)}, expected {tuple(own[k].shape)}")
    with torch.no_grad():
        for k, v in state.items():
            own[k].copy_(v.to(own[k].dtype))


def _state_copy(model) -> "OrderedDict[str, torch.Tensor]":
    return OrderedDict((k, v.detach().clone()) for k, v in model.state_dict().items())


# ---------------------------------------------------------------------------
# pretraining


def pretrain_loss(model, eo, sar, eo_aug, sar_aug, curves, tau=0.07, lam=0.5, generator=None, perturb_scale=None):
    """Total pretraining loss for one batch; all four views share one forward pass.

    Returns ``(l_total, l_sym, l_unsup)``. ``l_unsup`` averages the optical and
    SAR streams.
    """
    n = eo.shape[0]
    sar3 = sar.expand(-1, eo.shape[1], -1, -1) if sar.shape[1] == 1 else sar
    sar_aug3 = sar_aug.expand(-1, eo.shape[1], -1, -1) if sar_aug.shape[1] == 1 else sar_aug
    images = torch.cat([eo, sar3, eo_aug, sar_aug3], dim=0)
    z = model(images, list(curves) * 4, mode="pretrain", generator=generator, perturb_scale=perturb_scale)
    z_eo, z_sar, z_eo_aug, z_sar_aug = z[:n], z[n : 2 * n], z[2 * n : 3 * n], z[3 * n :]
    l_sym = sym_loss(z_sar, z_eo, z_sar_aug, z_eo_aug, tau)
    l_unsup = 0.5 * (unsup_loss(z_eo, z_eo_aug, tau) + unsup_loss(z_sar, z_sar_aug, tau))
    return total_loss(l_sym, l_unsup, lam), l_sym, l_unsup


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    inference_checkpoint: Checkpoint
    log: list[dict]
    epoch_losses: list[float]
    token_pair_ids: list[str]
    token_energy: torch.Tensor | None


def corpus_curves(pairs: Sequence[ImagePair], n_bands: int, source: str = "per_sample") -> list[DiscrepancyCurve]:
    h, w = pairs[0].eo.shape[:2]
    masks = build_mdc_masks(n_bands, h, w)
    curves = [compute_mdc(p, masks) for p in pairs]
    if source == "dataset":
        avg = mean_curve(curves)
        curves = [avg] * len(curves)
    return curves


def build_model(config: RunConfig, aux: bool = True, dtype=torch.float32) -> MCPTEncoder:
    model = MCPTEncoder(config.encoder, config.aux_config() if aux else None)
    model.reset_parameters(torch.Generator().manual_seed(stream_seeds(config.seed)["init"]))
    return model.to(dtype)


def pretrain(
    config: RunConfig,
    pairs: Sequence[ImagePair],
    log_fn: Callable[[dict], None] | None = None,
    dump_dir=None,
    init_state: dict[str, torch.Tensor] | None = None,
) -> PretrainResult:
    """Contrastive pretraining of the pretrain-policy parameters.

    ``init_state`` optionally overwrites any subset of the seeded initialization
    (for instance backbone weights from another run); unknown names are an error.
    """
    if not pairs:
        raise ValueError("empty paired corpus")
    if not config.ablation.mcpt:
        raise ConfigError("pretraining is disabled by the ablation flags (mcpt=False)")
    sched = config.schedule.pretrain
    seeds = stream_seeds(config.seed)
    model = build_model(config, aux=True)
    if init_state is not None:
        _load_partial(model, init_state)
    trainable = set_trainable(model, "pretrain")
    opt = torch.optim.AdamW(
        _optimizer_groups(model, trainable, sched.weight_decay),
        lr=sched.lr, betas=(sched.beta1, sched.beta2), weight_decay=sched.weight_decay,
    )
    curves = corpus_curves(pairs, config.data.mdc_bands, config.data.curve_source)
    aft_gen = torch.Generator().manual_seed(seeds["aft"])
    n = len(pairs)
    steps_per_epoch = math.ceil(n / sched.batch_size)
    total_steps = max(1, sched.epochs * steps_per_epoch)
    dtype = torch.float32
    aug = AugmentParams()

    history, epoch_losses, step = [], [], 0
    model.train()
    for epoch in range(sched.epochs):
        order = np.random.default_rng([seeds["data"], epoch]).permutation(n)
        totals = []
        for b in range(steps_per_epoch):
            idx = order[b * sched.batch_size : (b + 1) * sched.batch_size]
            batch = [pairs[i] for i in idx]
            eo = _chw([p.eo for p in batch], dtype)
            sar = _chw([p.sar for p in batch], dtype)
            eo_aug = _chw([augment(p.eo, _view_seed(seeds["augment"], epoch, int(i), 0), aug) for p, i in zip(batch, idx)], dtype)
            sar_aug = _chw([augment(p.sar, _view_seed(seeds["augment"], epoch, int(i), 1), aug) for p, i in zip(batch, idx)], dtype)
            lr = cosine_lr(step, total_steps, sched.lr, sched.lr_min)
            _set_lr(opt, lr)
            l_tot, l_sym, l_uns = pretrain_loss(
                model, eo, sar, eo_aug, sar_aug, [curves[i] for i in idx],
                config.loss.tau, config.loss.lam, generator=aft_gen,
            )
            if not torch.isfinite(l_tot):
                dump = {"step": step, "epoch": epoch, "pair_ids": [p.pair_id for p in batch],
                        "l_sym": float(l_sym.detach()), "l_unsup": float(l_uns.detach())}
                if dump_dir is not None:
                    Path(dump_dir).mkdir(parents=True, exist_ok=True)
                    (Path(dump_dir) / "nonfinite_batch.json").write_text(json.dumps(dump, indent=1))
                raise NonFiniteLossError(f"non-finite loss at step {step}", dump)
            opt.zero_grad(set_to_none=True)
            l_tot.backward()
            opt.step()
            rec = {"step": step, "l_sym": float(l_sym.detach()), "l_unsup": float(l_uns.detach()), "l_total": float(l_tot.detach()), "lr": lr}
            history.append(rec)
            if log_fn is not None:
                log_fn(rec)
            totals.append(rec["l_total"])
            step += 1
        epoch_losses.append(float(np.mean(totals)))
        log.info("pretrain epoch %d/%d mean loss %.4f", epoch + 1, sched.epochs, epoch_losses[-1])

    meta = {"kind": "pretrain", "config": config.to_dict(), "step": step, "rng_streams": seeds,
            "epoch_losses": epoch_losses}
    full = Checkpoint(_state_copy(model), meta)
    stripped = Checkpoint(OrderedDict(model.inference_state()), {**meta, "kind": "pretrain-inference"})

    # token energy maps of the first few pairs, evaluation-mode sampling
    k = min(4, n)
    energy = None
    if model.has_auxiliary and model.fer.use_experts:
        with torch.no_grad():
            model.eval()
            eo = _chw([p.eo for p in pairs[:k]], dtype)
            x = model._tokens(eo)
            for block in model.blocks[:-1]:
                x = block(x)
            patches = x[:, 1:]
            side = math.isqrt(patches.shape[1])
            grid = patches.transpose(1, 2).reshape(k, -1, side, side)
            energy = token_energy(model.aft(grid, curves[:k], perturb_scale=0.0))
    return PretrainResult(full, stripped, history, epoch_losses, [p.pair_id for p in pairs[:k]], energy)


# ---------------------------------------------------------------------------
# fine-tuning


def semi_supervised_kmeans(z: np.ndarray, labels: np.ndarray, k: int, old_index: dict[int, int],
                           iters: int = 30, seed: int = 0) -> np.ndarray:
    """Spherical k-means where labeled points stay pinned to their class.

    Old-class centers start at labeled means; the remaining centers are seeded by
    k-means++ over the unlabeled points. Returns unit-norm centers (k x D).
    """
    rng = np.random.default_rng(seed)
    z = z / np.linalg.norm(z, axis=1, keepdims=True).clip(1e-12)
    labeled = labels >= 0
    pinned = np.array([old_index[int(c)] if c >= 0 else -1 for c in labels])
    centers = np.zeros((k, z.shape[1]))
    for cls, j in old_index.items():
        members = z[labels == cls]
        if len(members):
            centers[j] = members.mean(axis=0)
    n_init = len(old_index)
    pool = z[~labeled] if (~labeled).any() else z
    for j in range(n_init, k):
        if j == 0:
            centers[j] = pool[rng.integers(len(pool))]
            continue
        d = 1.0 - pool @ _unit(centers[:j]).T
        d2 = np.clip(d.min(axis=1), 0, None) ** 2
        p = d2 / d2.sum() if d2.sum() > 0 else None
        centers[j] = pool[rng.choice(len(pool), p=p)]
    centers = _unit(centers)
    for _ in range(iters):
        assign = np.where(labeled, pinned, np.argmax(z @ centers.T, axis=1))
        new = centers.copy()
        for j in range(k):
            members = z[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        new = _unit(new)
        if np.allclose(new, centers):
            break
        centers = new
    return centers


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True).clip(1e-12)


@dataclass
class FinetuneResult:
    model: MCPTEncoder
    prototypes: torch.Tensor
    checkpoint: Checkpoint
    log: list[dict]
    class_index: dict[int, int]


def finetune(
    config: RunConfig,
    init: Checkpoint | None,
    split: GCDSplit,
    log_fn: Callable[[dict], None] | None = None,
) -> FinetuneResult:
    """Fit the last block, the head and class prototypes on ``D_l`` and ``D_u``.

    ``init=None`` starts from the seeded random initialization (no pretraining).
    """
    if init is not None and has_auxiliary_tensors(init.model_state):
        raise ValueError("fine-tuning needs a stripped checkpoint (AFT/FER tensors present)")
    sched = config.schedule.finetune
    seeds = stream_seeds(config.seed)
    model = build_model(config, aux=False)
    if init is not None:
        model.load_state_dict(init.model_state, strict=True)
    trainable = set_trainable(model, "finetune")
    dtype = next(model.parameters()).dtype

    n_classes = sched.num_classes or split.num_classes
    old_sorted = sorted(split.old_classes)
    class_index = {c: i for i, c in enumerate(old_sorted)}
    pool: list[Sample] = list(split.labeled) + list(split.unlabeled)
    labels = np.array([class_index[s.class_id] for s in split.labeled] + [-1] * len(split.unlabeled))
    raw_labels = np.array([s.class_id for s in split.labeled] + [-1] * len(split.unlabeled))

    from .evaluation import embed_samples

    model.eval()
    z0 = embed_samples(model, pool).double().numpy()
    centers = semi_supervised_kmeans(z0, raw_labels, n_classes, class_index, sched.kmeans_iters, seeds["init"])
    prototypes = torch.nn.Parameter(torch.as_tensor(centers, dtype=dtype))

    params = [p for n, p in model.named_parameters() if n in trainable] + [prototypes]
    opt = torch.optim.SGD(params, lr=sched.lr, momentum=sched.momentum, weight_decay=sched.weight_decay)
    loss_cfg = FinetuneLossConfig(config.loss.tau, config.loss.tau_proto, config.loss.confidence)
    aug = AugmentParams()
    n = len(pool)
    steps_per_epoch = math.ceil(n / sched.batch_size)
    total_steps = max(1, sched.epochs * steps_per_epoch)
    history, step = [], 0
    labels_t = torch.as_tensor(labels)
    model.train()
    for epoch in range(sched.epochs):
        order = np.random.default_rng([seeds["data"], 1_000_003, epoch]).permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * sched.batch_size : (b + 1) * sched.batch_size]
            x = _chw([pool[i].image for i in idx], dtype)
            x_aug = _chw([augment(pool[i].image, _view_seed(seeds["augment"], 7, epoch, int(i)), aug) for i in idx], dtype)
            lr = cosine_lr(step, total_steps, sched.lr, sched.lr_min)
            _set_lr(opt, lr)
            z = model(torch.cat([x, x_aug]), mode="inference")
            loss, terms = finetune_loss(z[: len(idx)], z[len(idx) :], prototypes, labels_t[idx], loss_cfg)
            if not torch.isfinite(loss):
                raise NonFiniteLossError(f"non-finite fine-tune loss at step {step}", {"step": step, **terms})
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if sched.grad_clip is not None:
                terms["grad_norm"] = float(torch.nn.utils.clip_grad_norm_(params, sched.grad_clip))
            opt.step()
            rec = {"step": step, "lr": lr, **terms}
            history.append(rec)
            if log_fn is not None:
                log_fn(rec)
            step += 1
    model.eval()
    protos = prototypes.detach().clone()
    tensors = _state_copy(model)
    tensors["prototypes"] = protos
    meta = {"kind": "finetune", "config": config.to_dict(), "step": step, "rng_streams": seeds,
            "class_index": {str(k): v for k, v in class_index.items()}, "num_classes": n_classes,
            "approximation": "prototype-classifier fine-tuner approximating the ProtoGCD objective"}
    return FinetuneResult(model, protos, Checkpoint(tensors, meta), history, class_index)


def load_finetuned(ckpt: Checkpoint) -> tuple[MCPTEncoder, torch.Tensor]:
    config = ckpt.config()
    model = MCPTEncoder(config.encoder, None)
    state = ckpt.model_state
    model = model.to(next(iter(state.values())).dtype)
    model.load_state_dict(state, strict=True)
    model.eval()
    if ckpt.prototypes is None:
        raise ValueError("checkpoint has no prototypes")
    return model, ckpt.prototypes


# ---------------------------------------------------------------------------
# synthetic end-to-end experiment


def synthetic_data(config: RunConfig):
    """Paired pretraining corpus and GCD split built from the data section and seed."""
    d = config.data
    noise = imaging.NoiseParams(d.speckle, d.blur, d.gamma)
    pairs, _ = imaging.synth_corpus(d.n_pairs, d.n_classes, noise, seed=config.seed, size=d.image_size)
    gcd_noise = imaging.NoiseParams(d.gcd_speckle, d.blur, d.gamma)
    train, test = imaging.synth_classification_corpus(
        d.train_per_class, d.test_per_class, d.n_classes, gcd_noise, seed=config.seed + 1, size=d.image_size,
        separable=d.separable,
    )
    return pairs, gcd_split(config, train, test)


def gcd_split(config: RunConfig, train: Sequence[Sample], test: Sequence[Sample]) -> GCDSplit:
    d = config.data
    return imaging.make_splits(train, d.old_classes, d.label_fraction, seed=stream_seeds(config.seed)["data"], test=test)

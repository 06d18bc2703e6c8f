"""Training loop, learning-rate schedule, optimizer, and gradient checks.

The optimizer is the usual decoupled-weight-decay adaptive-moment update,
written out here so decay stays tied to the base learning rate rather
than the scheduled one: a step taken at schedule value 0 moves parameters
only through decay. All randomness (sample order, orientation draws,
masking, dropout) flows from derived seeds, so a run is a pure function
of (data, configs).
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import torch

from .batching import PreparedSample, class_index, collate, prepare_sample
from .errors import ConfigError, DataError
from .evaluation import apply_orientation_mode
from .model import Batch, GroundingModel, ModelConfig, init_model
from .objectives import LossBundle, LossTargets, LossWeights, MaskingPolicy, compute_loss
from .perception import NoiseModel
from .seeding import derive_seed
from .utterances import UtteranceRecord


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-4
    warmup_steps: Optional[int] = None  # None -> 10% of total_steps
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    label_source: str = "gt"  # gt | noisy
    orientation_mode: str = "corrected"  # corrected | none
    loss_weights: LossWeights = field(default_factory=LossWeights)
    masking: MaskingPolicy = field(default_factory=MaskingPolicy)
    checkpoint_interval: int = 0  # 0 -> final checkpoint only

    def validate(self) -> None:
        if self.total_steps <= 0:
            raise ConfigError("total_steps must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.warmup_steps is not None and not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError("warmup_steps must lie in [0, total_steps]")
        if not 0.0 <= self.betas[0] < 1.0 or not 0.0 <= self.betas[1] < 1.0:
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.label_source not in ("gt", "noisy"):
            raise ConfigError(f"label_source must be gt or noisy, got {self.label_source!r}")
        if self.orientation_mode not in ("corrected", "none"):
            raise ConfigError(
                f"orientation_mode must be corrected or none, got {self.orientation_mode!r}"
            )
        self.loss_weights.validate()
        self.masking.validate()
        if not self.loss_weights.enable_ref:
            raise ConfigError("training requires the reference loss to be enabled")

    @property
    def resolved_warmup(self) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return max(1, round(0.1 * self.total_steps))


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to learning_rate, then linear decay to 0 at total_steps."""
    warmup = cfg.resolved_warmup
    if step < 0 or step > cfg.total_steps:
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps}]")
    if warmup > 0 and step <= warmup:
        return cfg.learning_rate * step / warmup
    return cfg.learning_rate * (cfg.total_steps - step) / (cfg.total_steps - warmup)


class AdamW:
    """Decoupled weight decay, applied at the base rate every step.

    update: p -= scheduled_lr * m_hat / (sqrt(v_hat) + eps)
            p -= base_lr * weight_decay * p
    """

    def __init__(self, params, base_lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(params)
        if not self.params:
            raise ConfigError("optimizer needs at least one parameter")
        self.base_lr = base_lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg = [torch.zeros_like(p) for p in self.params]
        self.exp_avg_sq = [torch.zeros_like(p) for p in self.params]

    @torch.no_grad()
    def step(self, scheduled_lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.exp_avg, self.exp_avg_sq):
            grad = p.grad if p.grad is not None else torch.zeros_like(p)
            m.mul_(b1).add_(grad, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(grad, grad, value=1.0 - b2)
            denom = (v / bias2).sqrt_().add_(self.eps)
            p.addcdiv_(m / bias1, denom, value=-scheduled_lr)
            if self.weight_decay > 0.0:
                p.add_(p, alpha=-self.base_lr * self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class TrainResult:
    model: GroundingModel
    log: list[dict]
    checkpoints: dict[int, dict]  # step -> state_dict snapshot (final always present)


def _batch_fingerprint(batch: Batch) -> str:
    digest = hashlib.sha256(batch.token_ids.numpy().tobytes()).hexdigest()
    return digest[:12]


LabelFn = Callable[[str, int], str]  # (scene_id, object_id) -> label text


def make_label_fn(data, source: str) -> LabelFn:
    """Label text shown to the model: true classes or classifier top-1."""
    if source == "gt":
        return lambda scene_id, oid: data.scenes[scene_id].object_by_id(oid).class_label
    if source == "noisy":
        if data.predictions is None:
            raise DataError("label_source=noisy requires classifier predictions")
        return lambda scene_id, oid: data.predictions[scene_id][oid].top1
    raise ConfigError(f"unknown label source {source!r}")


def train(
    data,
    records: list[UtteranceRecord],
    vocab,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
) -> TrainResult:
    """Train a fresh model on the given records.

    ``data`` is a GroundingData corpus (scenes, catalog, optional
    predictions). Every batch re-derives its orientation, masking, and
    dropout seeds from (cfg.seed, step), so reruns are bit-identical.
    """
    cfg.validate()
    model_cfg.validate()
    if not records:
        raise DataError("no training records")
    model = init_model(model_cfg, derive_seed(cfg.seed, "init"))
    optimizer = AdamW(
        model.parameters(),
        base_lr=cfg.learning_rate,
        betas=cfg.betas,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    label_fn = make_label_fn(data, cfg.label_source)
    class_to_id = class_index(data.catalog)
    order_rng = random.Random(derive_seed(cfg.seed, "order"))

    indices: list[int] = []
    log: list[dict] = []
    checkpoints: dict[int, dict] = {}
    for step in range(cfg.total_steps):
        batch_ids = []
        while len(batch_ids) < cfg.batch_size:
            if not indices:
                indices = list(range(len(records)))
                order_rng.shuffle(indices)
            batch_ids.append(indices.pop())

        samples: list[PreparedSample] = []
        for slot, rec_idx in enumerate(batch_ids):
            record = records[rec_idx]
            scene = data.scenes[record.scene_id]
            presented = apply_orientation_mode(
                record, scene, cfg.orientation_mode, derive_seed(cfg.seed, "orient", step, slot)
            )
            labels = {
                obj.object_id: label_fn(record.scene_id, obj.object_id)
                for obj in presented.objects
            }
            samples.append(
                prepare_sample(
                    record,
                    presented,
                    labels,
                    vocab,
                    model_cfg,
                    class_to_id,
                    masking=cfg.masking if cfg.loss_weights.enable_mask else None,
                    mask_seed=derive_seed(cfg.seed, "mask", step, slot),
                )
            )

        batch, target_index, binary_labels, text_class, mlm_labels = collate(samples)
        targets = LossTargets(
            target_index=target_index,
            binary_labels=binary_labels,
            text_class=text_class,
            mlm_labels=mlm_labels,
        )
        gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "dropout", step))
        out = model(batch, train_mode=True, dropout_generator=gen)
        bundle = compute_loss(out, targets, cfg.loss_weights)

        total_value = float(bundle.total.detach())
        if not math.isfinite(total_value):
            raise DataError(
                f"training diverged at step {step} "
                f"(loss {total_value}, batch {_batch_fingerprint(batch)})"
            )

        optimizer.zero_grad()
        bundle.total.backward()
        lr = lr_at(step + 1, cfg)
        optimizer.step(lr)

        entry = {"step": step, "lr": lr}
        entry.update(bundle.scalars())
        log.append(entry)
        done = step + 1
        if cfg.checkpoint_interval > 0 and done % cfg.checkpoint_interval == 0:
            checkpoints[done] = {
                k: v.detach().clone() for k, v in model.state_dict().items()
            }

    checkpoints[cfg.total_steps] = {
        k: v.detach().clone() for k, v in model.state_dict().items()
    }
    return TrainResult(model=model, log=log, checkpoints=checkpoints)


def grad_check(
    model: GroundingModel,
    batch: Batch,
    targets: LossTargets,
    weights: LossWeights,
    epsilon: float = 1e-5,
    min_coords: int = 200,
    seed: int = 0,
) -> float:
    """Compare autograd against central differences on sampled coordinates.

    Samples at least min_coords coordinates spread over every parameter
    tensor and returns max |g_fd - g_ad| / max(1, |g_fd|, |g_ad|). The
    model must be run without dropout (eval-mode forward) so the loss is
    a deterministic function of the parameters.
    """
    named = [(name, p) for name, p in model.named_parameters()]
    model.zero_grad()
    bundle = compute_loss(model(batch, train_mode=False), targets, weights)
    bundle.total.backward()
    analytic = {
        name: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in named
    }

    rng = random.Random(seed)
    per_tensor = max(1, math.ceil(min_coords / len(named)))
    worst = 0.0
    with torch.no_grad():
        for name, p in named:
            flat = p.view(-1)
            n = flat.numel()
            picks = rng.sample(range(n), min(per_tensor, n))
            for idx in picks:
                original = flat[idx].item()
                flat[idx] = original + epsilon
                loss_plus = float(compute_loss(model(batch), targets, weights).total)
                flat[idx] = original - epsilon
                loss_minus = float(compute_loss(model(batch), targets, weights).total)
                flat[idx] = original
                fd = (loss_plus - loss_minus) / (2.0 * epsilon)
                ad = float(analytic[name].view(-1)[idx])
                err = abs(fd - ad) / max(1.0, abs(fd), abs(ad))
                worst = max(worst, err)
    return worst


def grad_check_setup(
    dtype: torch.dtype = torch.float64,
    weights: Optional[LossWeights] = None,
    seed: int = 0,
):
    """Build a tiny deterministic (model, batch, targets) triple for checks."""
    from .encoding import build_vocab
    from .oracle import RelationSpec
    from .scenes import GenConfig, generate_scene
    from .utterances import generate_utterance, template_lexicon

    gen_cfg = GenConfig(min_objects=6, max_objects=8)
    rng = random.Random(seed)
    scene = None
    record = None
    for attempt in range(200):
        try:
            candidate = generate_scene(gen_cfg, derive_seed(seed, "scene", attempt))
            record = generate_utterance(candidate, gen_cfg, derive_seed(seed, "utt", attempt))
            scene = candidate
            break
        except Exception:
            continue
    if scene is None or record is None:
        raise DataError("could not draw a scene/utterance pair for the check")

    vocab = build_vocab(gen_cfg.catalog, template_lexicon())
    model_cfg = ModelConfig(
        vocab_size=vocab.size,
        n_classes=len(gen_cfg.catalog),
        d_model=24,
        n_layers=1,
        n_heads=2,
        ff_dim=48,
        dropout=0.0,
        max_len=128,
    )
    model = init_model(model_cfg, derive_seed(seed, "init"), dtype=dtype)
    class_to_id = class_index(gen_cfg.catalog)
    labels = {obj.object_id: obj.class_label for obj in scene.objects}
    sample = prepare_sample(
        record,
        scene,
        labels,
        vocab,
        model_cfg,
        class_to_id,
        masking=MaskingPolicy(select_p=1.0),
        mask_seed=derive_seed(seed, "mask"),
    )
    batch, target_index, binary_labels, text_class, mlm_labels = collate([sample], dtype=dtype)
    targets = LossTargets(
        target_index=target_index,
        binary_labels=binary_labels,
        text_class=text_class,
        mlm_labels=mlm_labels,
    )
    if weights is None:
        weights = LossWeights()
    return model, batch, targets, weights

"""Epoch driver: coarse mask -> prompts -> pseudo-label -> pool -> loss -> EMA.

Each image is processed independently (pools are keyed per image, so
processing order cannot change any per-image result) and per-image failures
are recorded in the epoch report instead of aborting the epoch. Every
randomized stage derives its seed from the run seed, the image id and the
epoch index, which makes whole runs replay bit-identically.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import sample_augs
from .entropy import DEFAULT_THETA
from .errors import ConfigError, DimensionMismatch, EngineError
from .oracle import (
    SubprocessSegmenter,
    SyntheticOracleConfig,
    SyntheticSegmenter,
    coarse_fused_mask,
    generate_pseudo_label,
)
from .pool import LabelPool, save_pool, snapshot, update_pool
from .prompts import extract_prompts
from .raster import DEFAULT_HI, DEFAULT_LO, GrayMask, SparseAnnotation, load_mask
from .seeding import stable_seed
from .supervise import (
    ParamVector,
    SelectionThresholds,
    ema_update,
    loss_semi,
    loss_weak,
    select,
)

ORACLE_CMD_ENV = "SEE_ORACLE_CMD"


@dataclass(frozen=True)
class OracleSettings:
    """Configuration of one segmenter role (teacher, student, or prompted)."""

    kind: str = "synthetic"  # "synthetic" | "subprocess"
    base_quality: float = 0.5
    prompt_gain: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    quality_ramp: tuple[float, float] | None = None
    command: tuple[str, ...] | None = None
    timeout_ms: int = 30_000

    def __post_init__(self):
        if self.kind not in ("synthetic", "subprocess"):
            raise ConfigError(f"unknown oracle kind {self.kind!r}")
        if self.kind == "subprocess" and not self.command:
            raise ConfigError("subprocess oracle requires a command")

    def quality_at(self, epoch: int, total_epochs: int) -> float:
        if self.quality_ramp is None:
            return self.base_quality
        start, end = self.quality_ramp
        if total_epochs <= 1:
            return start
        frac = (epoch - 1) / (total_epochs - 1)
        return start + (end - start) * frac

    @classmethod
    def from_json(cls, obj: dict) -> "OracleSettings":
        ramp = obj.get("quality_ramp")
        return cls(
            kind=obj.get("kind", "synthetic"),
            base_quality=float(obj.get("base_quality", 0.5)),
            prompt_gain=float(obj.get("prompt_gain", 0.0)),
            noise_sigma=float(obj.get("noise_sigma", 0.0)),
            seed=int(obj.get("seed", 0)),
            quality_ramp=(float(ramp[0]), float(ramp[1])) if ramp else None,
            command=tuple(obj["command"]) if obj.get("command") else None,
            timeout_ms=int(obj.get("timeout_ms", 30_000)),
        )


@dataclass(frozen=True)
class PipelineConfig:
    teacher: OracleSettings
    sam: OracleSettings
    student: OracleSettings
    pool_dir: str
    report_dir: str
    k_views: int = 12
    pool_capacity: int = 3
    theta: float = DEFAULT_THETA
    tau_a: float = 0.1
    tau_r: float = 0.5
    eta: float = 0.996
    lo: float = DEFAULT_LO
    hi: float = DEFAULT_HI
    mode: str = "weak"  # "weak" | "semi"
    seed: int = 0
    epochs: int = 1
    workers: int = 1
    pool_always_replace: bool = False

    def __post_init__(self):
        if self.mode not in ("weak", "semi"):
            raise ConfigError(f"unknown supervision mode {self.mode!r}")
        if self.k_views < 1 or self.pool_capacity < 1 or self.epochs < 1:
            raise ConfigError("k_views, pool_capacity and epochs must be >= 1")
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ConfigError(f"need 0 <= lo < hi <= 1, got {self.lo}, {self.hi}")

    @property
    def thresholds(self) -> SelectionThresholds:
        return SelectionThresholds(tau_a=self.tau_a, tau_r=self.tau_r)

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        kwargs = dict(obj)
        for role in ("teacher", "sam", "student"):
            kwargs[role] = OracleSettings.from_json(obj.get(role, {}))
        kwargs.pop("manifest", None)
        return cls(**kwargs)


@dataclass(frozen=True)
class DatasetItem:
    id: str
    image: str
    annotation: str | None = None
    label: str | None = None


def load_manifest(path) -> list[DatasetItem]:
    records = json.loads(Path(path).read_text())
    items = []
    for rec in records:
        items.append(
            DatasetItem(
                id=rec["id"],
                image=rec["image"],
                annotation=rec.get("annotation"),
                label=rec.get("label"),
            )
        )
    return items


@dataclass
class EpochState:
    epoch: int = 0
    prev_pred: dict = field(default_factory=dict)
    pools: dict = field(default_factory=dict)
    teacher_params: ParamVector | None = None
    student_params: ParamVector | None = None


def init_state(config: PipelineConfig) -> EpochState:
    """Fresh state with deterministic stand-in parameter vectors for EMA."""
    rng = np.random.default_rng(stable_seed(config.seed, "params"))
    teacher = ParamVector.build(
        [("backbone", rng.standard_normal(8)), ("head", rng.standard_normal(4))]
    )
    student = ParamVector.build(
        [("backbone", rng.standard_normal(8)), ("head", rng.standard_normal(4))]
    )
    return EpochState(teacher_params=teacher, student_params=student)


def _make_handle(settings: OracleSettings, item: DatasetItem, gt: GrayMask | None,
                 epoch: int, total_epochs: int):
    if settings.kind == "subprocess":
        command = list(settings.command)
        return SubprocessSegmenter(command, timeout_ms=settings.timeout_ms)
    if gt is None:
        raise ConfigError(
            f"synthetic oracle for {item.id} needs a ground-truth label raster"
        )
    cfg = SyntheticOracleConfig(
        ground_truth=gt,
        base_quality=settings.quality_at(epoch, total_epochs),
        prompt_gain=settings.prompt_gain,
        noise_sigma=settings.noise_sigma,
        seed=stable_seed(settings.seed, item.id),
    )
    return SyntheticSegmenter(cfg)


def _binarize(mask: GrayMask) -> np.ndarray:
    return mask.values > 0.5


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def evaluate(preds: list[GrayMask], gts: list[GrayMask]) -> dict:
    """MAE and binarized IoU per mask pair plus aggregate means."""
    if len(preds) != len(gts):
        raise DimensionMismatch(f"{len(preds)} predictions vs {len(gts)} labels")
    per_image = []
    for p, g in zip(preds, gts):
        if p.shape != g.shape:
            raise DimensionMismatch(f"{p.shape} vs {g.shape}")
        mae = float(np.mean(np.abs(p.values.astype(np.float64) - g.values.astype(np.float64))))
        iou = float(_mask_iou(_binarize(p), _binarize(g)))
        per_image.append({"mae": mae, "iou": iou})
    agg = {
        "mae": float(np.mean([m["mae"] for m in per_image])) if per_image else 0.0,
        "iou": float(np.mean([m["iou"] for m in per_image])) if per_image else 0.0,
    }
    return {"per_image": per_image, "aggregate": agg}


def _process_image(item: DatasetItem, state: EpochState, config: PipelineConfig,
                   epoch: int):
    """One image's epoch step; returns (report_record, prev_pred, pool)."""
    image = load_mask(item.image)
    gt = load_mask(item.label) if item.label else None

    augs = sample_augs(config.k_views, stable_seed(config.seed, "augs", item.id, epoch))
    teacher = _make_handle(config.teacher, item, gt, epoch, config.epochs)
    coarse = coarse_fused_mask(image, augs, teacher)
    prompts = extract_prompts(coarse, config.lo, config.hi)

    sam = _make_handle(config.sam, item, gt, epoch, config.epochs)
    pseudo = generate_pseudo_label(image, augs, prompts, sam)

    prev = state.prev_pred.get(item.id)
    if prev is None:
        prev = GrayMask.full(image.width, image.height, 0.5)
    pool = state.pools.get(item.id, LabelPool(capacity=config.pool_capacity))
    pool = update_pool(
        pool,
        pseudo,
        prev,
        rng_seed=stable_seed(config.seed, "pool", item.id, epoch),
        epoch=epoch,
        theta=config.theta,
        always_replace=config.pool_always_replace,
    )

    student = _make_handle(config.student, item, gt, epoch, config.epochs)
    pred = student.segment(image)

    snap = snapshot(pool)
    thresholds = config.thresholds
    if config.mode == "weak":
        if item.annotation is None:
            raise ConfigError(f"{item.id}: weak supervision requires an annotation")
        ann = SparseAnnotation.from_mask(load_mask(item.annotation), config.lo, config.hi)
        loss = loss_weak(pred, snap, ann, thresholds, config.theta)
    else:
        loss = loss_semi(pred, snap, gt, thresholds, config.theta)

    record = {
        "loss": loss,
        "selected": [bool(select(e.mask, thresholds, config.theta)) for e in snap],
        "pool_epochs": [e.epoch_added for e in snap],
        "num_fg_points": len(prompts.fg_points),
        "num_bg_points": len(prompts.bg_points),
        "box": [prompts.box.x0, prompts.box.y0, prompts.box.x1, prompts.box.y1],
    }
    if gt is not None:
        gt_bin = _binarize(gt)
        record["pseudo_iou"] = _mask_iou(_binarize(pseudo), gt_bin)
        record["pseudo_mae"] = float(
            np.mean(np.abs(pseudo.values.astype(np.float64) - gt.values.astype(np.float64)))
        )
        record["best_pool_iou"] = max(
            (_mask_iou(_binarize(e.mask), gt_bin) for e in snap), default=0.0
        )
    return record, pred, pool


def run_epoch(state: EpochState, config: PipelineConfig,
              dataset: list[DatasetItem]) -> tuple[EpochState, dict]:
    """Run one epoch over the dataset; returns (next state, epoch report).

    Per-image errors are recorded under ``skipped`` and never abort the
    epoch; such images keep their previous pool and prediction. Pool state is
    persisted under the configured pool directory.
    """
    epoch = state.epoch + 1
    new_state = EpochState(
        epoch=epoch,
        prev_pred=dict(state.prev_pred),
        pools=dict(state.pools),
        teacher_params=state.teacher_params,
        student_params=state.student_params,
    )

    def task(item: DatasetItem):
        try:
            return item, _process_image(item, state, config, epoch), None
        except EngineError as exc:
            return item, None, f"{exc.code}: {exc}"

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool_exec:
            outcomes = list(pool_exec.map(task, dataset))
    else:
        outcomes = [task(item) for item in dataset]

    images = {}
    for item, result, failure in outcomes:
        if failure is not None:
            images[item.id] = {"skipped": failure}
            continue
        record, pred, pool = result
        images[item.id] = record
        new_state.prev_pred[item.id] = pred
        new_state.pools[item.id] = pool

    if state.teacher_params is not None and state.student_params is not None:
        new_state.teacher_params = ema_update(
            state.teacher_params, state.student_params, config.eta
        )

    pool_dir = Path(config.pool_dir)
    pool_dir.mkdir(parents=True, exist_ok=True)
    for image_id, pool in sorted(new_state.pools.items()):
        save_pool(pool, pool_dir, image_id)

    ious = [rec["best_pool_iou"] for rec in images.values() if "best_pool_iou" in rec]
    losses = [rec["loss"] for rec in images.values() if "loss" in rec]
    report = {
        "epoch": epoch,
        "images": images,
        "aggregate": {
            "mean_best_pool_iou": float(np.mean(ious)) if ious else None,
            "mean_loss": float(np.mean(losses)) if losses else None,
            "processed": len(losses),
            "skipped": len(dataset) - len(losses),
        },
        "teacher_param_sum": (
            float(sum(a.sum() for a in new_state.teacher_params.arrays))
            if new_state.teacher_params is not None
            else None
        ),
    }
    return new_state, report


def run_simulation(config: PipelineConfig, dataset: list[DatasetItem]) -> list[dict]:
    """Run all configured epochs, writing one report JSON per epoch."""
    report_dir = Path(config.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    state = init_state(config)
    reports = []
    for _ in range(config.epochs):
        state, report = run_epoch(state, config, dataset)
        path = report_dir / f"report_epoch_{report['epoch']:03d}.json"
        path.write_text(json.dumps(report, sort_keys=True, indent=1))
        reports.append(report)
    return reports


def apply_oracle_env_override(config: PipelineConfig) -> PipelineConfig:
    """Honor the SEE_ORACLE_CMD environment override for subprocess oracles."""
    cmd = os.environ.get(ORACLE_CMD_ENV)
    if not cmd:
        return config
    parts = tuple(cmd.split())
    updated = {}
    for role in ("teacher", "sam", "student"):
        settings = getattr(config, role)
        if settings.kind == "subprocess":
            updated[role] = replace(settings, command=parts)
    return replace(config, **updated) if updated else config

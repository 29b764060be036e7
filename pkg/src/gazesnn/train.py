"""Training and evaluation loops, metrics logging, and the ablation grid.

One training step: optionally enhance the image with its gaze mask, run the
spiking forward pass for T timesteps, take softmax cross entropy on the
averaged logits, optionally add the weighted attention-alignment penalty,
backpropagate through the surrogate gradients, and apply SGD with momentum.

The persisted metrics log is one JSON document per line with sorted keys
and no timing fields, so identical (config, seed) runs produce
byte-identical logs; wall-clock times go to a separate run-info file.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import tensor as tn
from .blocks import (EgSpikeFormer, ModelConfig, build_model, model_forward,
                     model_forward_batch)
from .checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from .data import DatasetConfig, generate_dataset, load_dataset
from .errors import ConfigError, ContractError, TrainingAbort
from .gaze import (GazeTokenAttention, alignment_loss, apply_gaze_mask,
                   gaze_token_attention, heatmap_from_fixations, total_loss)
from .metrics import accuracy, attention_gaze_ssim, f1_binary, roc_auc
from .rng import generator
from .tensor import SgdOptimizer, Tensor, softmax_probs

METRICS_SCHEMA = "metrics/1"


@dataclass(frozen=True)
class TrainConfig:
    """Full experiment description; every field has a CLI override."""

    timesteps: int = 4
    alpha: float = 0.5
    lambda_loss: float = 1.0
    enable_gm: bool = True
    enable_alh: bool = True
    gm_at_eval: bool = True
    learning_rate: float = 0.004
    momentum: float = 0.9
    lr_decay: float = 0.5
    lr_milestones: tuple = (0.5, 0.75)
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    heatmap_sigma: float | None = None
    data_dir: str | None = None
    out_dir: str | None = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.timesteps < 1:
            raise ConfigError(f"timesteps must be >= 1, got {self.timesteps}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.lambda_loss < 0:
            raise ConfigError(f"lambda_loss must be >= 0, got {self.lambda_loss}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    @property
    def sigma(self) -> float:
        return float(self.model.patch_size if self.heatmap_sigma is None else self.heatmap_sigma)

    def to_dict(self) -> dict:
        return {
            "timesteps": self.timesteps,
            "alpha": self.alpha,
            "lambda_loss": self.lambda_loss,
            "enable_gm": self.enable_gm,
            "enable_alh": self.enable_alh,
            "gm_at_eval": self.gm_at_eval,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "lr_decay": self.lr_decay,
            "lr_milestones": list(self.lr_milestones),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "heatmap_sigma": self.heatmap_sigma,
            "data_dir": self.data_dir,
            "out_dir": self.out_dir,
            "dataset": self.dataset.to_dict(),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        try:
            if "lr_milestones" in d:
                d["lr_milestones"] = tuple(d["lr_milestones"])
            if "dataset" in d:
                d["dataset"] = DatasetConfig.from_dict(d["dataset"])
            if "model" in d:
                d["model"] = ModelConfig.from_dict(d["model"])
            return cls(**d)
        except (TypeError, ContractError) as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class MetricsRow:
    """Per-epoch metrics; wall time never enters the persisted log."""

    epoch: int
    accuracy: float
    auc: float | None
    f1: float
    ssim: float
    ssim_raw: float
    loss_cls: float
    loss_align: float
    loss_total: float
    wall_time_s: float = 0.0

    def to_json_line(self) -> str:
        doc = {
            "schema": METRICS_SCHEMA,
            "epoch": self.epoch,
            "accuracy": self.accuracy,
            "auc": self.auc,
            "f1": self.f1,
            "ssim": self.ssim,
            "ssim_raw": self.ssim_raw,
            "ssim_aggregation": "per-image mean, clamped to [0, 1]",
            "loss_cls": self.loss_cls,
            "loss_align": self.loss_align,
            "loss_total": self.loss_total,
        }
        return json.dumps(doc, sort_keys=True)


@dataclass
class _Prepared:
    """Per-sample tensors precomputed once per run."""

    raw: Tensor
    enhanced: Tensor
    gaze_target: GazeTokenAttention
    gaze_grid: np.ndarray
    label: int


def _prepare_samples(samples, config: TrainConfig):
    cfg = config.model
    prepared = []
    for s in samples:
        mask = heatmap_from_fixations(s.gaze, config.sigma, cfg.image_size, cfg.image_size)
        raw = tn.constant(s.image)
        enhanced = apply_gaze_mask(raw, mask, config.alpha) if config.enable_gm else raw
        target = gaze_token_attention(mask, cfg.patch_size)
        gh = cfg.grid_size
        grid = mask.mask.data.reshape(gh, cfg.patch_size, gh, cfg.patch_size).sum(axis=(1, 3))
        prepared.append(_Prepared(raw, enhanced, target, grid, int(s.label)))
    return prepared


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def evaluate_model(model: EgSpikeFormer, samples, config: TrainConfig,
                   epoch: int = -1) -> MetricsRow:
    """Inference metrics on a split: accuracy, AUC, F1, attention-gaze SSIM.

    Gaze enhancement applies at evaluation only when both ``enable_gm`` and
    ``gm_at_eval`` are set. AUC of a single-class split is reported absent.
    """
    if not samples:
        raise ContractError("evaluate needs a nonempty split")
    started = time.perf_counter()
    use_gm = config.enable_gm and config.gm_at_eval
    prepared = _prepare_samples(samples, replace(config, enable_gm=use_gm))
    labels = np.array([p.label for p in prepared])
    preds = np.empty(len(prepared), dtype=int)
    scores = np.empty(len(prepared))
    ssims = np.empty(len(prepared))
    cls_losses = np.empty(len(prepared))
    align_losses = np.empty(len(prepared))
    with tn.no_grad():
        for i, p in enumerate(prepared):
            res = model_forward(model, p.enhanced, timesteps=config.timesteps, training=False)
            probs = softmax_probs(res.logits.data)
            preds[i] = int(np.argmax(probs))
            scores[i] = probs[1]
            ssims[i] = attention_gaze_ssim(res.attention.data, p.gaze_grid,
                                           config.model.patch_size)
            cls_losses[i] = -np.log(max(probs[p.label], 1e-300))
            diff = res.attention.data - p.gaze_target.matrix.data
            align_losses[i] = float((diff * diff).mean())
    mean_align = float(align_losses.mean()) if config.enable_alh else 0.0
    mean_cls = float(cls_losses.mean())
    raw_ssim = float(ssims.mean())
    return MetricsRow(
        epoch=epoch,
        accuracy=accuracy(preds, labels),
        auc=roc_auc(scores, labels),
        f1=f1_binary(preds, labels),
        ssim=_clamp01(raw_ssim),
        ssim_raw=raw_ssim,
        loss_cls=mean_cls,
        loss_align=mean_align,
        loss_total=mean_cls + config.lambda_loss * mean_align,
        wall_time_s=time.perf_counter() - started,
    )


def evaluate_checkpoint(checkpoint_path, samples, config: TrainConfig,
                        timesteps: int | None = None) -> MetricsRow:
    model = load_checkpoint(checkpoint_path)
    if timesteps is not None:
        config = replace(config, timesteps=timesteps)
    return evaluate_model(model, samples, config)


@dataclass
class TrainResult:
    model: EgSpikeFormer
    rows: list
    out_dir: Path | None
    checkpoint_path: Path | None
    metrics_path: Path | None


def _resolve_dataset(config: TrainConfig, dataset):
    if dataset is not None:
        return dataset
    if config.data_dir is not None:
        train_split, test_split, _ = load_dataset(config.data_dir)
        return train_split, test_split
    return generate_dataset(config.dataset, config.seed)


def _write_outputs(out_dir, model, rows, wall_times, config):
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.bin"
    metrics_path = out_dir / "metrics.jsonl"
    save_checkpoint(model, checkpoint_path)
    with open(metrics_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(row.to_json_line() + "\n")
    with open(out_dir / "runinfo.json", "w", encoding="utf-8") as fh:
        json.dump({"wall_time_s": sum(wall_times), "epoch_wall_times_s": wall_times,
                   "config": config.to_dict()}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return checkpoint_path, metrics_path


def train(config: TrainConfig, dataset=None, log=None) -> TrainResult:
    """Train from a config; returns the model and the per-epoch metrics rows.

    ``dataset`` may inject a pre-generated (train, test) pair; otherwise the
    config's ``data_dir`` is loaded or a synthetic dataset is generated from
    the config seed. Aborts with the last completed epoch's checkpoint on a
    non-finite loss or gradient.
    """
    train_split, test_split = _resolve_dataset(config, dataset)
    model_cfg = replace(config.model, timesteps=config.timesteps)
    config = replace(config, model=model_cfg)
    model = build_model(model_cfg, seed=config.seed)
    prepared = _prepare_samples(train_split, config)
    optimizer = SgdOptimizer(model.parameters(), config.learning_rate, config.momentum)
    out_dir = Path(config.out_dir) if config.out_dir is not None else None

    rows = []
    wall_times = []
    last_good = None

    def abort(reason: str):
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            if last_good is not None:
                with open(out_dir / "checkpoint.last_good.bin", "wb") as fh:
                    fh.write(last_good)
            with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
                for row in rows:
                    fh.write(row.to_json_line() + "\n")
            with open(out_dir / "abort.json", "w", encoding="utf-8") as fh:
                json.dump({"reason": reason, "completed_epochs": len(rows)}, fh, indent=1)
                fh.write("\n")
        tn.active_tape().clear()
        raise TrainingAbort(
            f"{reason}; last-good checkpoint covers {len(rows)} completed epoch(s)"
        )

    n = len(prepared)
    order_rng_key = 0xE9
    milestones = sorted({int(round(f * config.epochs)) for f in config.lr_milestones})
    for epoch in range(config.epochs):
        started = time.perf_counter()
        if epoch in milestones:
            optimizer.learning_rate *= config.lr_decay
        perm = generator(config.seed, order_rng_key, epoch).permutation(n)
        sums = {"cls": 0.0, "align": 0.0, "total": 0.0}
        for start in range(0, n, config.batch_size):
            batch = [prepared[int(i)] for i in perm[start : start + config.batch_size]]
            logits, attns, _ = model_forward_batch(
                model, [p.enhanced for p in batch], timesteps=config.timesteps,
                training=True,
            )
            batch_total = None
            for i, p in enumerate(batch):
                cls = tn.softmax_cross_entropy(tn.index0(logits, i), p.label)
                if config.enable_alh:
                    align = alignment_loss(attns[i], p.gaze_target)
                else:
                    align = tn.constant(0.0)
                combined = total_loss(cls, align, config.lambda_loss)
                sums["cls"] += cls.item()
                sums["align"] += align.item()
                sums["total"] += combined.item()
                batch_total = combined if batch_total is None else tn.add(batch_total, combined)
            batch_total = tn.scale(batch_total, 1.0 / len(batch))
            if not np.isfinite(batch_total.item()):
                abort(f"non-finite loss at epoch {epoch}")
            tn.backward(batch_total)
            try:
                optimizer.step()
            except TrainingAbort as exc:
                abort(str(exc))
            optimizer.zero_grad()

        eval_row = evaluate_model(model, test_split, config, epoch=epoch)
        row = MetricsRow(
            epoch=epoch,
            accuracy=eval_row.accuracy,
            auc=eval_row.auc,
            f1=eval_row.f1,
            ssim=eval_row.ssim,
            ssim_raw=eval_row.ssim_raw,
            loss_cls=sums["cls"] / n,
            loss_align=sums["align"] / n,
            loss_total=sums["total"] / n,
            wall_time_s=time.perf_counter() - started,
        )
        rows.append(row)
        wall_times.append(row.wall_time_s)
        if log is not None:
            log(f"epoch {epoch}: total {row.loss_total:.4f} "
                f"acc {row.accuracy:.3f} ssim {row.ssim:.3f}")
        last_good = checkpoint_bytes(model)

    checkpoint_path = metrics_path = None
    if out_dir is not None:
        checkpoint_path, metrics_path = _write_outputs(out_dir, model, rows, wall_times, config)
    return TrainResult(model=model, rows=rows, out_dir=out_dir,
                       checkpoint_path=checkpoint_path, metrics_path=metrics_path)


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------


def ablation_grid(base: TrainConfig, seeds, timesteps_grid=(2, 4), dataset_cache=None,
                  log=None):
    """Train and evaluate every {GM, no-GM} x {ALH, no-ALH} x T cell per seed.

    All cells of one seed share the same generated dataset, so the grid
    isolates the model settings. Returns one result dict per cell per seed.
    """
    rows = []
    for seed in seeds:
        cfg_seed = replace(base, seed=seed)
        if dataset_cache is not None and seed in dataset_cache:
            dataset = dataset_cache[seed]
        else:
            dataset = _resolve_dataset(cfg_seed, None)
            if dataset_cache is not None:
                dataset_cache[seed] = dataset
        for gm, alh, t_steps in product((True, False), (True, False), timesteps_grid):
            cfg = replace(cfg_seed, enable_gm=gm, enable_alh=alh, timesteps=t_steps,
                          out_dir=None)
            result = train(cfg, dataset=dataset)
            final = result.rows[-1]
            row = {
                "gm": gm,
                "alh": alh,
                "timesteps": t_steps,
                "seed": seed,
                "accuracy": final.accuracy,
                "auc": final.auc,
                "f1": final.f1,
                "ssim": final.ssim,
                "loss_total": final.loss_total,
            }
            rows.append(row)
            if log is not None:
                log(f"seed {seed} gm={int(gm)} alh={int(alh)} T={t_steps}: "
                    f"acc {final.accuracy:.3f} ssim {final.ssim:.3f}")
    return rows

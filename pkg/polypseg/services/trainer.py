import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
import orjson
import torch
import torch.nn as nn
from torch.utils.data import DataLoader
from tqdm import tqdm

from polypseg.core.config import settings
from polypseg.core.exceptions import DataError, DivergenceError, ValidationError
from polypseg.core.logger import JsonlWriter, get_logger
from polypseg.models.checkpoint import save_checkpoint
from polypseg.models.polyp_pvt import build_model
from polypseg.schemas.data import DatasetManifest
from polypseg.schemas.metrics import ScoreVector
from polypseg.schemas.model import ModelConfig
from polypseg.schemas.training import (
    DataConfig, EpochRecord, LossConfig, LossReport, RunRecord, TrainConfig,
)
from polypseg.services.data_pipeline import (
    SegmentationDataset, rescale_batch, scaled_size, train_val_split,
)
from polypseg.services.evaluator import score_manifest
from polypseg.services.losses import total_loss
from polypseg.utils.runtime import Stopwatch, run_id, select_device, set_seed

logger = get_logger(__name__)

RUN_RECORD_FILE = "run.json"
TRAIN_LOG_FILE = "train_log.jsonl"


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: lr0 · decay_rate^(epoch // decay_epoch)"""
    return cfg.lr * cfg.decay_rate ** (epoch // cfg.decay_epoch)


def planned_iterations(cfg: TrainConfig, n_train: int) -> int:
    """Optimizer steps a run takes: ceil(n_train / batch) per epoch, capped by max_iterations"""
    steps = cfg.epochs * math.ceil(n_train / cfg.batch)
    return min(steps, cfg.max_iterations) if cfg.max_iterations else steps


def gradient_norm(model: nn.Module) -> float:
    norms = [p.grad.detach().norm(2) for p in model.parameters() if p.grad is not None]
    if not norms:
        return 0.0
    return float(torch.norm(torch.stack(norms), 2))


def clip_gradients(model: nn.Module, clip: float) -> float:
    """Global-norm clipping; returns the norm after clipping"""
    torch.nn.utils.clip_grad_norm_(model.parameters(), max_norm=clip)
    return gradient_norm(model)


def mean_report(reports: list) -> LossReport:
    fields = LossReport.model_fields.keys()
    return LossReport(**{f: float(np.mean([getattr(r, f) for r in reports])) for f in fields})


def save_run_record(record: RunRecord, directory: Union[str, Path]) -> Path:
    path = Path(directory) / RUN_RECORD_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(record.model_dump(mode="json"), option=orjson.OPT_INDENT_2))
    return path


def read_run_record(path: Union[str, Path]) -> RunRecord:
    path = Path(path)
    if path.is_dir():
        path = path / RUN_RECORD_FILE
    if not path.is_file():
        raise DataError(f"run record {path} does not exist", [str(path)])
    return RunRecord.model_validate(orjson.loads(path.read_bytes()))


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, manifest: DatasetManifest,
          loss_cfg: LossConfig = LossConfig(), data_cfg: DataConfig = DataConfig(),
          output_dir: Optional[Union[str, Path]] = None, name: str = "polyp_pvt",
          val_manifest: Optional[DatasetManifest] = None,
          weight_file: Optional[str] = None) -> RunRecord:
    """Train one model and return its run record.

    Checkpoints land in ``output_dir``: ``best.pt`` (highest validation mDic)
    and ``last.pt``; with zero epochs only ``init.pt`` is written.
    """
    if len(manifest) == 0:
        raise DataError(f"training manifest {manifest.name} is empty")

    set_seed(train_cfg.seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    device = select_device(settings.DEVICE)
    out = Path(output_dir) if output_dir else settings.OUTPUT_DIR / run_id(name)
    out.mkdir(parents=True, exist_ok=True)
    log = JsonlWriter(out / TRAIN_LOG_FILE)

    model = build_model(model_cfg, weight_file).to(device)
    data_cfg = data_cfg.model_copy(update={"image_size": train_cfg.image_size})
    record = RunRecord(name=name, config={
        "model": model_cfg.model_dump(mode="json"),
        "train": train_cfg.model_dump(mode="json"),
        "loss": loss_cfg.model_dump(mode="json"),
        "data": data_cfg.model_dump(mode="json"),
    })

    if train_cfg.epochs == 0:
        record.checkpoints["init"] = str(save_checkpoint(model, out / "init.pt", model_cfg))
        save_run_record(record, out)
        logger.info(f"Zero epochs requested; wrote initial checkpoint to {out}")
        return record

    if val_manifest is not None:
        train_manifest = manifest
    else:
        train_manifest, val_manifest = train_val_split(
            manifest, train_cfg.val_fraction, train_cfg.seed,
        )

    loader = DataLoader(
        SegmentationDataset(train_manifest, data_cfg, train=True),
        batch_size=train_cfg.batch, shuffle=True, num_workers=settings.NUM_WORKERS,
        generator=torch.Generator().manual_seed(train_cfg.seed),
    )
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay,
    )
    scale_rng = np.random.default_rng(train_cfg.seed)

    logger.info(
        f"Training {name}: {len(train_manifest)} train / {len(val_manifest)} val images, "
        f"{train_cfg.epochs} epochs, batch {train_cfg.batch}, "
        f"{planned_iterations(train_cfg, len(train_manifest))} iterations"
    )
    iteration = 0
    with Stopwatch() as watch:
        for epoch in range(train_cfg.epochs):
            lr = learning_rate(train_cfg, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr

            model.train()
            reports, max_norm = [], 0.0
            batches = tqdm(loader, desc=f"epoch {epoch}", leave=False,
                           disable=not settings.PROGRESS)
            for images, masks in batches:
                size = scaled_size(train_cfg.image_size, float(scale_rng.choice(train_cfg.scales)))
                images, masks = rescale_batch(images.to(device), masks.to(device), size)

                pred = model(images)
                if not torch.isfinite(pred.p_final).all():
                    logger.error(f"Non-finite predictions at iteration {iteration}")
                    raise DivergenceError(f"training diverged at iteration {iteration}", iteration)
                try:
                    loss, report = total_loss(pred, masks, loss_cfg)
                except ValidationError as e:
                    logger.error(f"Loss failed at iteration {iteration}: {e.message}")
                    raise DivergenceError(
                        f"training diverged at iteration {iteration}: {e.message}", iteration,
                    )

                optimizer.zero_grad()
                loss.backward()
                norm = clip_gradients(model, train_cfg.clip)
                optimizer.step()

                iteration += 1
                max_norm = max(max_norm, norm)
                reports.append(report)
                log.write({
                    "event": "iteration", "epoch": epoch, "iteration": iteration, "lr": lr,
                    "size": size, "grad_norm": norm, **report.model_dump(),
                })
                batches.set_postfix(loss=f"{report.total:.4f}")
                if train_cfg.max_iterations and iteration >= train_cfg.max_iterations:
                    break

            epoch_record = EpochRecord(
                epoch=epoch, lr=lr, iterations=iteration, loss=mean_report(reports),
                max_grad_norm=max_norm,
            )
            stop = bool(train_cfg.max_iterations and iteration >= train_cfg.max_iterations)
            last_epoch = stop or epoch == train_cfg.epochs - 1
            if (epoch + 1) % train_cfg.eval_every == 0 or last_epoch:
                val = score_manifest(model, val_manifest, data_cfg, native=False)
                epoch_record.val = val.mean
                _keep_best(record, epoch, val.mean, model, model_cfg, out)

            record.epochs.append(epoch_record)
            log.write({"event": "epoch", **epoch_record.model_dump(mode="json")})
            logger.info(
                f"epoch {epoch}: loss {epoch_record.loss.total:.4f}, lr {lr:.2e}"
                + (f", val mDic {epoch_record.val.mDic:.4f}" if epoch_record.val else "")
            )
            if stop:
                break

    record.iterations = iteration
    record.wall_clock_seconds = watch.elapsed
    record.checkpoints["last"] = str(save_checkpoint(model, out / "last.pt", model_cfg))
    if "best" not in record.checkpoints:
        record.checkpoints["best"] = str(save_checkpoint(model, out / "best.pt", model_cfg))
    save_run_record(record, out)
    logger.info(f"Finished {name} after {iteration} iterations in {watch.elapsed:.1f}s")
    return record


def _keep_best(record: RunRecord, epoch: int, score: Optional[ScoreVector], model: nn.Module,
               model_cfg: ModelConfig, out: Path) -> None:
    if score is None:
        return
    if record.best_mdic is None or score.mDic > record.best_mdic:
        record.best_mdic = score.mDic
        record.best_epoch = epoch
        record.checkpoints["best"] = str(save_checkpoint(model, out / "best.pt", model_cfg))

from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib
import orjson

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from polypseg.core.logger import get_logger  # noqa: E402
from polypseg.schemas.metrics import DatasetScores, FrocPoint  # noqa: E402
from polypseg.schemas.training import RunRecord  # noqa: E402
from polypseg.services.metrics import froc_frame  # noqa: E402

logger = get_logger(__name__)


def loss_frame(record: RunRecord) -> pd.DataFrame:
    return pd.DataFrame(
        [{"epoch": e.epoch, "total": e.loss.total, "main": e.loss.main, "aux": e.loss.aux}
         for e in record.epochs],
        columns=["epoch", "total", "main", "aux"],
    )


def plot_loss_curves(records: Sequence[RunRecord], out_file: Union[str, Path]) -> Path:
    """Total training loss per epoch, one line per run, legend from run names"""
    out = Path(out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for record in records:
        frame = loss_frame(record)
        ax.plot(frame["epoch"], frame["total"], marker="o", markersize=3, label=record.name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if records:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    logger.info(f"Wrote loss curves for {len(records)} runs to {out}")
    return out


def plot_froc(scores: Dict[str, DatasetScores], out_dir: Union[str, Path]) -> List[Path]:
    """CSV and curve (TPR against false positives per image) per dataset"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, ds in scores.items():
        frame = froc_frame(ds)
        if frame.empty:
            continue
        csv = out / f"{name}_froc.csv"
        frame.to_csv(csv, index=False)
        written.append(csv)
        frame = frame.sort_values("fp_per_image")
        ax.plot(frame["fp_per_image"], frame["tpr"], marker=".", label=name)
    ax.set_xlabel("false positives per image")
    ax.set_ylabel("lesion sensitivity")
    ax.set_ylim(0, 1.02)
    if written:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    figure = out / "froc.png"
    fig.savefig(figure)
    plt.close(fig)
    written.append(figure)
    return written


def load_scores(paths: Sequence[Union[str, Path]]) -> Dict[str, DatasetScores]:
    """Dataset reports (.json) or FROC tables (.csv) written by the evaluator"""
    scores = {}
    for path in map(Path, paths):
        if path.suffix == ".csv":
            name = path.stem[:-len("_froc")] if path.stem.endswith("_froc") else path.stem
            rows = pd.read_csv(path).to_dict(orient="records")
            scores[name] = DatasetScores(name=name, froc=[FrocPoint(**r) for r in rows])
        else:
            ds = DatasetScores.model_validate(orjson.loads(path.read_bytes()))
            scores[ds.name or path.stem] = ds
    return scores

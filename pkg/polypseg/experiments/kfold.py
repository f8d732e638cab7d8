from pathlib import Path
from typing import Dict, List, Optional

from pydantic import Field, model_validator

from polypseg.core.exceptions import DataError
from polypseg.experiments.base_experiment import (
    ExperimentConfig, ExperimentState, MultiStepExperiment,
)
from polypseg.models.checkpoint import load_checkpoint
from polypseg.schemas.data import DatasetManifest
from polypseg.schemas.metrics import DatasetScores
from polypseg.schemas.training import ExperimentDocument, RunRecord
from polypseg.services.data_pipeline import available_manifests, kfold_splits, manifest_for
from polypseg.services.ensemble import ensemble_predictions, minority_votes
from polypseg.services.evaluator import write_report
from polypseg.services.metrics import format_table, score_arrays
from polypseg.services.trainer import train
from polypseg.utils.image_io import write_gray_png


class KFoldExperimentConfig(ExperimentConfig):
    """Fold count plus the voting and clean-up settings of the ensemble"""
    document: ExperimentDocument = Field(default_factory=ExperimentDocument)
    folds: int = Field(5, ge=2)
    min_votes: Optional[int] = Field(None, ge=1)
    opening: int = Field(3, ge=1)
    min_area: int = Field(50, ge=0)
    save_predictions: bool = False
    weight_file: Optional[str] = None

    @model_validator(mode="after")
    def votes_within_folds(self) -> "KFoldExperimentConfig":
        if self.min_votes is not None and self.min_votes > self.folds:
            raise ValueError(f"min_votes {self.min_votes} exceeds the {self.folds} fold models")
        return self

    @property
    def votes(self) -> int:
        return self.min_votes if self.min_votes is not None else minority_votes(self.folds)


class KFoldExperiment(MultiStepExperiment):
    """Train one model per fold, each validated on its held-out fold, then
    score the voted and cleaned ensemble on every test set found"""

    def __init__(self, config: KFoldExperimentConfig):
        super().__init__(config)
        self.config: KFoldExperimentConfig = config
        self.manifest: Optional[DatasetManifest] = None
        self.eval_manifests: List[DatasetManifest] = []
        self.records: List[RunRecord] = []
        self.scores: Dict[str, DatasetScores] = {}

    def get_execution_steps(self) -> List[str]:
        return ["load_data", "train_folds", "vote", "write_outputs"]

    def execute_load_data(self, state: ExperimentState) -> ExperimentState:
        data = self.config.document.data
        self.manifest = manifest_for(data, data.train_dataset, split="train")
        if len(self.manifest) < self.config.folds:
            raise DataError(
                f"{len(self.manifest)} training images cannot fill {self.config.folds} folds",
            )
        self.eval_manifests = available_manifests(data, data.test_datasets)
        if not self.eval_manifests:
            self.log_execution(state, "load_data",
                               f"No test datasets found; voting on {self.manifest.name}",
                               level="WARNING")
            self.eval_manifests = [self.manifest]
        state.metadata["eval_datasets"] = [m.name for m in self.eval_manifests]
        return state

    def execute_train_folds(self, state: ExperimentState) -> ExperimentState:
        doc = self.config.document
        splits = kfold_splits(self.manifest, self.config.folds, doc.train.seed)
        for i, (train_manifest, val_manifest) in enumerate(splits):
            self.log_execution(state, "train_folds",
                               f"Fold {i}: {len(train_manifest)} train / "
                               f"{len(val_manifest)} held-out images")
            record = train(
                doc.model, doc.train, train_manifest, loss_cfg=doc.loss, data_cfg=doc.data,
                output_dir=self.run_dir / f"fold{i}", name=f"{doc.name}_fold{i}",
                val_manifest=val_manifest, weight_file=self.config.weight_file,
            )
            self.records.append(record)
        state.metadata["fold_best_mdic"] = [r.best_mdic for r in self.records]
        return state

    def execute_vote(self, state: ExperimentState) -> ExperimentState:
        checkpoints = [r.checkpoints.get("best") or r.checkpoints["init"] for r in self.records]
        models = [load_checkpoint(c)[0] for c in checkpoints]
        data_cfg = self.config.document.data
        for manifest in self.eval_manifests:
            items = list(ensemble_predictions(
                models, manifest, data_cfg, self.config.votes,
                self.config.opening, self.config.min_area,
            ))
            if self.config.save_predictions:
                for stem, mask, _ in items:
                    write_gray_png(mask, self.run_dir / "masks" / manifest.name / f"{stem}.png")
            self.scores[manifest.name] = score_arrays(manifest.name, items, with_froc=True)
        state.metadata["votes"] = self.config.votes
        return state

    def execute_write_outputs(self, state: ExperimentState) -> ExperimentState:
        out: Path = write_report(self.scores, self.run_dir / "ensemble")
        state.output_data["report_dir"] = str(out)
        state.output_data["table"] = format_table(self.scores)
        state.output_data["fold_runs"] = [str(self.run_dir / f"fold{i}")
                                          for i in range(len(self.records))]
        return state

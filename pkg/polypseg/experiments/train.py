from typing import List, Optional

from pydantic import Field

from polypseg.experiments.base_experiment import (
    ExperimentConfig, ExperimentState, MultiStepExperiment,
)
from polypseg.models.checkpoint import load_checkpoint
from polypseg.schemas.data import DatasetManifest
from polypseg.schemas.training import ExperimentDocument
from polypseg.services.data_pipeline import available_manifests, manifest_for
from polypseg.services.evaluator import evaluate, write_report
from polypseg.services.metrics import format_table
from polypseg.services.trainer import save_run_record, train


class TrainExperimentConfig(ExperimentConfig):
    """Configuration for a training run"""
    document: ExperimentDocument = Field(default_factory=ExperimentDocument)
    weight_file: Optional[str] = None


class TrainExperiment(MultiStepExperiment):
    """Train on the training dataset, then score the best checkpoint on every test set found"""

    def __init__(self, config: TrainExperimentConfig):
        super().__init__(config)
        self.config: TrainExperimentConfig = config
        self.manifest: Optional[DatasetManifest] = None
        self.test_manifests: List[DatasetManifest] = []
        self.record = None

    def get_execution_steps(self) -> List[str]:
        return ["load_data", "train_model", "evaluate_tests", "write_outputs"]

    def execute_load_data(self, state: ExperimentState) -> ExperimentState:
        data = self.config.document.data
        self.manifest = manifest_for(data, data.train_dataset, split="train")
        self.test_manifests = available_manifests(data, data.test_datasets)
        state.metadata["train_images"] = len(self.manifest)
        state.metadata["test_datasets"] = [m.name for m in self.test_manifests]
        return state

    def execute_train_model(self, state: ExperimentState) -> ExperimentState:
        doc = self.config.document
        self.record = train(
            doc.model, doc.train, self.manifest, loss_cfg=doc.loss, data_cfg=doc.data,
            output_dir=self.run_dir, name=doc.name, weight_file=self.config.weight_file,
        )
        state.output_data["checkpoints"] = dict(self.record.checkpoints)
        return state

    def execute_evaluate_tests(self, state: ExperimentState) -> ExperimentState:
        checkpoint = self.record.checkpoints.get("best") or self.record.checkpoints.get("init")
        if not self.test_manifests or checkpoint is None:
            self.log_execution(state, "evaluate_tests", "No test datasets found; skipping")
            return state
        model, _ = load_checkpoint(checkpoint)
        scores = evaluate(model, self.test_manifests, self.config.document.data)
        write_report(scores, self.run_dir / "eval")
        self.record.eval_scores = {n: s.mean for n, s in scores.items() if s.mean is not None}
        state.output_data["table"] = format_table(scores)
        return state

    def execute_write_outputs(self, state: ExperimentState) -> ExperimentState:
        state.output_data["run_record"] = str(save_run_record(self.record, self.run_dir))
        state.output_data["final_loss"] = self.record.final_loss()
        return state

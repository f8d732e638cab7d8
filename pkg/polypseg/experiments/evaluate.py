from pathlib import Path
from typing import Dict, List, Optional

from pydantic import Field

from polypseg.core.exceptions import ConfigError
from polypseg.experiments.base_experiment import (
    ExperimentConfig, ExperimentState, MultiStepExperiment,
)
from polypseg.models.checkpoint import load_checkpoint
from polypseg.schemas.data import DatasetManifest
from polypseg.schemas.metrics import DatasetScores
from polypseg.schemas.training import DataConfig
from polypseg.services.data_pipeline import available_manifests, manifest_for
from polypseg.services.evaluator import evaluate, rotation_delta, score_manifest, write_report
from polypseg.services.metrics import format_table


class EvaluateExperimentConfig(ExperimentConfig):
    """Configuration for scoring a checkpoint"""
    checkpoint: Optional[Path] = None
    data: DataConfig = Field(default_factory=DataConfig)
    datasets: List[str] = Field(default_factory=list)
    gt_as_prediction: bool = False
    save_predictions: bool = False


class EvaluateExperiment(MultiStepExperiment):
    """Score a checkpoint on test datasets at native ground-truth resolution"""

    def __init__(self, config: EvaluateExperimentConfig):
        super().__init__(config)
        self.config: EvaluateExperimentConfig = config
        self.model = None
        self.manifests: List[DatasetManifest] = []
        self.scores: Dict[str, DatasetScores] = {}

    def get_execution_steps(self) -> List[str]:
        return ["load_model", "load_data", "score", "write_outputs"]

    def execute_load_model(self, state: ExperimentState) -> ExperimentState:
        if self.config.gt_as_prediction:
            self.log_execution(state, "load_model", "Ground truth used as prediction")
            return state
        if self.config.checkpoint is None:
            raise ConfigError("evaluation needs a checkpoint unless gt_as_prediction is set")
        self.model, model_cfg = load_checkpoint(self.config.checkpoint)
        state.metadata["variant"] = model_cfg.decoder.variant.value
        return state

    def execute_load_data(self, state: ExperimentState) -> ExperimentState:
        # Datasets named explicitly must exist; the default list is best effort
        if self.config.datasets:
            self.manifests = [manifest_for(self.config.data, n) for n in self.config.datasets]
        else:
            self.manifests = available_manifests(self.config.data, self.config.data.test_datasets)
        state.metadata["datasets"] = [m.name for m in self.manifests]
        return state

    def execute_score(self, state: ExperimentState) -> ExperimentState:
        save_dir = self.run_dir / "predictions" if self.config.save_predictions else None
        self.scores = evaluate(
            self.model, self.manifests, self.config.data,
            gt_as_prediction=self.config.gt_as_prediction, save_dir=save_dir,
        )
        return state

    def execute_write_outputs(self, state: ExperimentState) -> ExperimentState:
        out = write_report(self.scores, self.run_dir)
        state.output_data["report_dir"] = str(out)
        state.output_data["table"] = format_table(self.scores)
        state.output_data["scores"] = {
            name: s.mean.model_dump() for name, s in self.scores.items() if s.mean is not None
        }
        return state


class RotateEvalExperimentConfig(EvaluateExperimentConfig):
    degrees: float = 15.0


class RotateEvalExperiment(EvaluateExperiment):
    """Score upright and rotated copies of every test sample at sample resolution"""

    def __init__(self, config: RotateEvalExperimentConfig):
        super().__init__(config)
        self.config: RotateEvalExperimentConfig = config
        self.rotated: Dict[str, DatasetScores] = {}

    def get_execution_steps(self) -> List[str]:
        return ["load_model", "load_data", "score", "score_rotated", "write_outputs"]

    def _score_all(self, degrees: float) -> Dict[str, DatasetScores]:
        return {
            m.name: score_manifest(self.model, m, self.config.data, native=False,
                                   degrees=degrees,
                                   gt_as_prediction=self.config.gt_as_prediction)
            for m in self.manifests if len(m)
        }

    def execute_score(self, state: ExperimentState) -> ExperimentState:
        self.scores = self._score_all(0.0)
        return state

    def execute_score_rotated(self, state: ExperimentState) -> ExperimentState:
        self.rotated = self._score_all(self.config.degrees)
        state.output_data["delta_mDic"] = rotation_delta(self.scores, self.rotated)
        return state

    def execute_write_outputs(self, state: ExperimentState) -> ExperimentState:
        write_report(self.scores, self.run_dir / "upright")
        write_report(self.rotated, self.run_dir / f"rotated_{self.config.degrees:g}")
        state.output_data["table"] = format_table(self.scores)
        state.output_data["rotated_table"] = format_table(self.rotated)
        state.output_data["report_dir"] = str(self.run_dir)
        return state

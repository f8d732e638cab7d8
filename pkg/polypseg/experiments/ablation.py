from typing import Dict, List, Optional

import pandas as pd
from pydantic import Field

from polypseg.core.exceptions import DataError
from polypseg.experiments.base_experiment import (
    ExperimentConfig, ExperimentState, MultiStepExperiment,
)
from polypseg.models.checkpoint import load_checkpoint
from polypseg.models.layers import count_parameters
from polypseg.models.polyp_pvt import build_model
from polypseg.schemas.data import DatasetManifest
from polypseg.schemas.metrics import DatasetScores
from polypseg.schemas.model import VARIANT_LABELS, AblationVariant
from polypseg.schemas.response import AblationTable
from polypseg.schemas.training import ExperimentDocument
from polypseg.services.data_pipeline import available_manifests, manifest_for
from polypseg.services.evaluator import evaluate
from polypseg.services.trainer import save_run_record, train

# Column order of the ablation table
LABEL_ORDER = [VARIANT_LABELS[v] for v in (
    AblationVariant.BASELINE, AblationVariant.NO_CFM, AblationVariant.NO_CIM,
    AblationVariant.NO_SAM, AblationVariant.SAM_NOGCN, AblationVariant.SAM_CONV,
    AblationVariant.FULL,
)]

TABLE_METRICS = ("mDic", "mIoU")


def build_table(results: Dict[AblationVariant, Dict[str, DatasetScores]],
                parameter_counts: Optional[Dict[AblationVariant, int]] = None,
                run_dirs: Optional[Dict[AblationVariant, str]] = None) -> AblationTable:
    """Rows are ``<dataset> <metric>``, columns are variant labels in table order"""
    variants = sorted(results, key=lambda v: LABEL_ORDER.index(v.label))
    table = AblationTable(columns=[v.label for v in variants])
    for variant in variants:
        for name, ds in results[variant].items():
            if ds.mean is None:
                continue
            for metric in TABLE_METRICS:
                row = table.rows.setdefault(name, {}).setdefault(metric, {})
                row[variant.label] = getattr(ds.mean, metric)
    for variant, count in (parameter_counts or {}).items():
        table.parameter_counts[variant.label] = count
    for variant, path in (run_dirs or {}).items():
        table.run_dirs[variant.label] = path
    return table


def table_frame(table: AblationTable) -> pd.DataFrame:
    records = []
    for dataset, metrics in table.rows.items():
        for metric, values in metrics.items():
            records.append({"dataset": dataset, "metric": metric, **values})
    frame = pd.DataFrame(records, columns=["dataset", "metric", *table.columns])
    return frame.set_index(["dataset", "metric"])


def format_ablation(table: AblationTable) -> str:
    frame = table_frame(table)
    text = frame.to_string(float_format=lambda x: f"{x:.3f}") if not frame.empty else "(no scores)"
    if table.parameter_counts:
        counts = "  ".join(f"{k}: {v:,}" for k, v in table.parameter_counts.items())
        text += f"\nparameters  {counts}"
    if table.note:
        text += f"\n{table.note}"
    return text


class AblationExperimentConfig(ExperimentConfig):
    """Shared document plus the variants to compare"""
    document: ExperimentDocument = Field(default_factory=ExperimentDocument)
    variants: List[AblationVariant] = Field(default_factory=lambda: [
        AblationVariant.BASELINE, AblationVariant.NO_CFM, AblationVariant.NO_CIM,
        AblationVariant.NO_SAM, AblationVariant.FULL,
    ])
    weight_file: Optional[str] = None


class AblationExperiment(MultiStepExperiment):
    """Train and score every variant with the same seed, data and protocol"""

    def __init__(self, config: AblationExperimentConfig):
        super().__init__(config)
        self.config: AblationExperimentConfig = config
        self.manifest: Optional[DatasetManifest] = None
        self.eval_manifests: List[DatasetManifest] = []
        self.results: Dict[AblationVariant, Dict[str, DatasetScores]] = {}
        self.parameter_counts: Dict[AblationVariant, int] = {}
        self.run_dirs: Dict[AblationVariant, str] = {}
        self.note: Optional[str] = None

    def get_execution_steps(self) -> List[str]:
        return ["load_data", "count_parameters", "run_variants", "write_outputs"]

    def validate_input(self, state: ExperimentState) -> bool:
        return len(self.config.variants) > 0

    def execute_load_data(self, state: ExperimentState) -> ExperimentState:
        data = self.config.document.data
        self.manifest = manifest_for(data, data.train_dataset, split="train")
        if len(self.manifest) == 0:
            raise DataError(f"training dataset {data.train_dataset} is empty")
        self.eval_manifests = available_manifests(data, data.test_datasets)
        if not self.eval_manifests:
            self.note = f"no test datasets found; scores are on {self.manifest.name}"
            self.eval_manifests = [self.manifest]
        state.metadata["eval_datasets"] = [m.name for m in self.eval_manifests]
        return state

    def execute_count_parameters(self, state: ExperimentState) -> ExperimentState:
        for variant in self.config.variants:
            model = build_model(self.config.document.model.with_variant(variant))
            self.parameter_counts[variant] = count_parameters(model)
        state.metadata["parameter_counts"] = {
            v.value: n for v, n in self.parameter_counts.items()
        }
        return state

    def execute_run_variants(self, state: ExperimentState) -> ExperimentState:
        doc = self.config.document
        for variant in self.config.variants:
            run_dir = self.run_dir / variant.value
            self.log_execution(state, "run_variants", f"Training variant {variant.label}")
            record = train(
                doc.model.with_variant(variant), doc.train, self.manifest,
                loss_cfg=doc.loss, data_cfg=doc.data, output_dir=run_dir,
                name=f"{doc.name}_{variant.value}", weight_file=self.config.weight_file,
            )
            checkpoint = record.checkpoints.get("best") or record.checkpoints["init"]
            model, _ = load_checkpoint(checkpoint)
            self.results[variant] = evaluate(model, self.eval_manifests, doc.data)
            record.eval_scores = {
                n: s.mean for n, s in self.results[variant].items() if s.mean is not None
            }
            save_run_record(record, run_dir)
            self.run_dirs[variant] = str(run_dir)
        return state

    def execute_write_outputs(self, state: ExperimentState) -> ExperimentState:
        table = build_table(self.results, self.parameter_counts, self.run_dirs)
        table.note = self.note
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "ablation.json").write_text(table.model_dump_json(indent=2))
        (self.run_dir / "ablation.txt").write_text(format_ablation(table) + "\n")
        state.output_data["table"] = format_ablation(table)
        state.output_data["ablation"] = table.model_dump()
        return state

from typing import List, Optional

from polypseg.experiments.base_experiment import (
    ExperimentConfig, ExperimentState, MultiStepExperiment,
)
from polypseg.schemas.response import GradCheckReport
from polypseg.services.gradcheck import require_pass, run_gradcheck


class GradCheckExperimentConfig(ExperimentConfig):
    module: str = "all"
    seed: int = 0


class GradCheckExperiment(MultiStepExperiment):
    """Finite-difference and dense-oracle checks; fails when any suite exceeds tolerance"""

    def __init__(self, config: GradCheckExperimentConfig):
        super().__init__(config)
        self.config: GradCheckExperimentConfig = config
        self.report: Optional[GradCheckReport] = None

    def get_execution_steps(self) -> List[str]:
        return ["run_suites", "write_outputs", "check"]

    def execute_run_suites(self, state: ExperimentState) -> ExperimentState:
        self.report = run_gradcheck(self.config.module, self.config.seed)
        state.output_data["passed"] = self.report.passed
        state.output_data["suites"] = {
            r.suite: {"kind": r.kind, "max_error": r.max_error, "passed": r.passed}
            for r in self.report.results
        }
        return state

    def execute_write_outputs(self, state: ExperimentState) -> ExperimentState:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        out = self.run_dir / f"gradcheck_{self.config.module}.json"
        out.write_text(self.report.model_dump_json(indent=2))
        state.output_data["report"] = str(out)
        return state

    def execute_check(self, state: ExperimentState) -> ExperimentState:
        require_pass(self.report)
        return state

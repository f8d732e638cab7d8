import logging
import uuid
from abc import ABC, abstractmethod
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from polypseg.core.config import settings
from polypseg.core.exceptions import BaseCustomException, ExperimentExecutionError
from polypseg.core.logger import get_logger


class ExperimentConfig(BaseModel):
    """Base configuration for all experiments"""
    name: str
    description: str = ""
    seed: int = 2021
    output_dir: Path = Field(default_factory=lambda: settings.OUTPUT_DIR)
    enable_logging: bool = True
    custom_params: Dict[str, Any] = Field(default_factory=dict)


class ExperimentState(BaseModel):
    """State carried from step to step"""
    run_id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    experiment: str = ""
    current_step: str = ""
    input_data: Dict[str, Any] = Field(default_factory=dict)
    output_data: Dict[str, Any] = Field(default_factory=dict)
    errors: List[str] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(default_factory=dict)
    created_at: datetime = Field(default_factory=datetime.now)
    updated_at: datetime = Field(default_factory=datetime.now)


class BaseExperiment(ABC):
    """Base class for everything the command line runs"""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.logger = self._setup_logger()

    def _setup_logger(self) -> logging.Logger:
        return get_logger(f"{self.__class__.__name__}_{self.config.name}",
                          enable=self.config.enable_logging)

    @property
    def run_dir(self) -> Path:
        return Path(self.config.output_dir) / self.config.name

    @abstractmethod
    def execute(self, state: ExperimentState) -> ExperimentState:
        """Execute the experiment's main functionality"""

    def validate_input(self, state: ExperimentState) -> bool:
        return True

    def run(self, input_data: Optional[Dict[str, Any]] = None) -> ExperimentState:
        state = ExperimentState(experiment=self.config.name, input_data=input_data or {})
        if not self.validate_input(state):
            raise ExperimentExecutionError(
                f"invalid input for experiment {self.config.name}", self.config.name,
            )
        self.logger.info(f"Starting experiment {self.config.name}")
        state = self.execute(state)
        state.updated_at = datetime.now()
        self.logger.info(f"Completed experiment {self.config.name}")
        return state

    def log_execution(self, state: ExperimentState, step: str, message: str,
                      level: str = "INFO") -> None:
        if self.config.enable_logging:
            self.logger.log(logging.getLevelName(level), f"[{step}] {message}")


class MultiStepExperiment(BaseExperiment):
    """Runs ``execute_<step>`` for every step name, in order"""

    @abstractmethod
    def get_execution_steps(self) -> List[str]:
        """Return list of execution step names"""

    def execute(self, state: ExperimentState) -> ExperimentState:
        for step in self.get_execution_steps():
            state = self.execute_step(step, state)
        return state

    def execute_step(self, step_name: str, state: ExperimentState) -> ExperimentState:
        state.current_step = step_name
        state.updated_at = datetime.now()
        step_method = getattr(self, f"execute_{step_name}", None)
        if step_method is None:
            error_msg = f"Step method 'execute_{step_name}' not implemented"
            state.errors.append(error_msg)
            self.log_execution(state, step_name, error_msg, "ERROR")
            raise ExperimentExecutionError(error_msg, self.config.name)

        self.log_execution(state, step_name, f"Starting step: {step_name}")
        try:
            result_state = step_method(state)
        except BaseCustomException as e:
            state.errors.append(f"Error in step {step_name}: {e.message}")
            self.log_execution(state, step_name, state.errors[-1], "ERROR")
            raise
        except Exception as e:
            error_msg = f"Error in step {step_name}: {str(e)}"
            state.errors.append(error_msg)
            self.log_execution(state, step_name, error_msg, "ERROR")
            raise ExperimentExecutionError(error_msg, self.config.name) from e
        self.log_execution(state, step_name, f"Completed step: {step_name}")
        return result_state


class ExperimentRegistry:
    """Maps command names to experiment classes"""

    def __init__(self):
        self._experiments: Dict[str, type] = {}

    def register(self, name: str, experiment_class: type) -> None:
        if not issubclass(experiment_class, BaseExperiment):
            raise ValueError("Experiment class must inherit from BaseExperiment")
        self._experiments[name] = experiment_class

    def create_experiment(self, name: str, config: ExperimentConfig) -> BaseExperiment:
        if name not in self._experiments:
            raise ExperimentExecutionError(f"Experiment '{name}' not registered", name)
        return self._experiments[name](config)

    def list_experiments(self) -> List[str]:
        return list(self._experiments.keys())


# Global experiment registry
experiment_registry = ExperimentRegistry()

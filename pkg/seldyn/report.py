"""
Report records written by the CLI. Every command produces one RunReport
(report.json) that echoes the configuration it ran with.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from dataclasses_json import dataclass_json

from .control import TrainResult
from .stability import GrowthFit, RankOneVerdict, SpectralReport, SteadyStateReport


@dataclass_json
@dataclass
class ForwardSummary:
    integrator: str
    final_norm: float
    growth: Optional[GrowthFit] = None
    sigma_monotone: Optional[bool] = None
    energy_monotone: Optional[bool] = None
    closed_form_error: Optional[float] = None
    diverged_at: Optional[int] = None


@dataclass_json
@dataclass
class TrainSummary:
    algo: str
    converged: bool
    iterations: int
    final_loss: Optional[float]
    loss_history: List[float]
    grad_norm_history: List[float]
    hamiltonian_history: List[float] = field(default_factory=list)
    descent_slack: List[float] = field(default_factory=list)
    control_change: List[float] = field(default_factory=list)
    degenerate_steps: List[int] = field(default_factory=list)
    loss_monotone: Optional[bool] = None
    diverged_at: Optional[int] = None

    @classmethod
    def from_result(cls, result: TrainResult) -> "TrainSummary":
        monotone = None
        if result.algo == "ppa":
            h = result.loss_history
            monotone = all(h[k + 1] <= h[k] + 1e-10 for k in range(len(h) - 1))
        return cls(
            algo=result.algo,
            converged=result.converged,
            iterations=result.iterations,
            final_loss=result.final_loss,
            loss_history=list(result.loss_history),
            grad_norm_history=list(result.grad_norm_history),
            hamiltonian_history=list(result.hamiltonian_history),
            descent_slack=list(result.descent_slack),
            control_change=list(result.control_change),
            degenerate_steps=list(result.degenerate_steps),
            loss_monotone=monotone,
        )


@dataclass_json
@dataclass
class AnalyzeSummary:
    spectral: SpectralReport
    steady_state: SteadyStateReport
    conditioning: List[float]
    rank_one: Optional[RankOneVerdict] = None
    relu_steady_state: Optional[str] = None


@dataclass_json
@dataclass
class GradcheckBlock:
    block: str
    max_rel_error: float
    mean_rel_error: float
    entries: int
    masked: int = 0


@dataclass_json
@dataclass
class GradcheckSummary:
    blocks: List[GradcheckBlock]
    max_rel_error: float
    passed: bool
    skipped: bool = False
    regularizer_error: Optional[float] = None
    notice: str = ""


@dataclass_json
@dataclass
class RunReport:
    command: str
    config: Dict
    status: str = "ok"
    exit_code: int = 0
    message: str = ""
    forward: Optional[ForwardSummary] = None
    train: Optional[TrainSummary] = None
    analyze: Optional[AnalyzeSummary] = None
    gradcheck: Optional[GradcheckSummary] = None
    timings: Dict[str, float] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)

    def add_artifact(self, path: Path, out_dir: Path) -> None:
        self.artifacts.append(str(Path(path).relative_to(out_dir)))

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "report.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        self.artifacts.append("report.json")
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_json(indent=2, sort_keys=True) + "\n")
        return path

"""Uniform entry point for fitting any of the three solvers on a dataset."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .core import Dataset, Model
from .errors import InvalidParameterError, NonConvergenceError
from .isvm import IsvmState
from .kernel import KernelSpec
from .lasvm import EpochSchedule, LasvmState, kkt_outsiders, stream_position, train_online
from .smo import SmoConfig, solve

ALGORITHMS = ("isvm", "lasvm", "smo")


@dataclass(frozen=True)
class TrainerConfig:
    algo: str = "lasvm"
    C: float = 100.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    tau: float = 0.01
    epoch_size: int = 200
    finish_every: int = 5
    seed: int = 0
    passes: int = 1
    smo_tolerance: float = 1e-3
    # iterations allowed per training sample: SMO steps, or steps per LASVM finishing call
    iteration_budget: Optional[int] = None

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise InvalidParameterError(f"algo must be one of {ALGORITHMS}, got {self.algo!r}")
        if self.iteration_budget is not None and self.iteration_budget < 1:
            raise InvalidParameterError("iteration_budget must be >= 1")

    @property
    def schedule(self) -> EpochSchedule:
        return EpochSchedule(self.epoch_size, self.finish_every, self.seed, self.passes)

    def schedule_for(self, n: int) -> EpochSchedule:
        steps = None if self.iteration_budget is None else self.iteration_budget * n
        return replace(self.schedule, finish_steps=steps)

    def new_state(self):
        if self.algo == "isvm":
            return IsvmState(self.C, self.kernel)
        if self.algo == "lasvm":
            return LasvmState(self.C, self.tau, self.kernel)
        raise InvalidParameterError("the batch solver has no incremental state")


def fit(config: TrainerConfig, dataset: Dataset) -> Model:
    if config.algo == "smo":
        smo = SmoConfig(config.C, config.kernel, config.smo_tolerance)
        if config.iteration_budget is not None:
            smo = replace(smo, max_passes=config.iteration_budget)
        model = solve(dataset, smo)
        if not model.meta["converged"]:
            raise NonConvergenceError("SMO hit its iteration limit", model.meta)
        return model
    state = config.new_state()
    if config.algo == "isvm":
        for x, label in zip(dataset.X, dataset.y):
            state.learn_sample(x, int(label))
    else:
        train_online(state, dataset, config.schedule_for(len(dataset)))
    return state.to_model()


def fit_lasvm_converged(dataset: Dataset, C: float, tau: float, kernel: KernelSpec,
                        seed: int = 0, max_passes: int = 10) -> LasvmState:
    """Run LASVM passes until no sample outside the support set violates optimality."""
    schedule = EpochSchedule(shuffle_seed=seed, passes=max_passes)
    state = LasvmState(C, tau, kernel)
    n = len(dataset)
    for p in range(max_passes):
        train_online(state, dataset, schedule, start=p * n, stop=(p + 1) * n)
        if kkt_outsiders(state, dataset).size == 0:
            return state
    raise NonConvergenceError(f"LASVM still has violators after {max_passes} passes")


def advance(state, stream: Dataset, schedule: EpochSchedule, start: int, stop: int) -> int:
    """Feed stream positions ``start..stop-1`` to an online state; returns ``stop``.

    Both trainers see the same seeded epoch order, so ISVM and LASVM runs
    over one stream are comparable and can be resumed at any position.
    """
    if isinstance(state, IsvmState):
        n = len(stream)
        for pos in range(start, stop):
            idx = stream_position(n, pos, schedule)
            state.learn_sample(stream.X[idx], int(stream.y[idx]))
    else:
        train_online(state, stream, schedule, start=start, stop=stop)
    return stop

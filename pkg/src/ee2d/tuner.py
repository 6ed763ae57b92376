"""Threshold search: exhaustive grid and coarse-to-fine refinement.

Both searches maximize the total-operations speed-up subject to the
accuracy floor acc_thr. Ties prefer the larger tau_acc (more conservative
exits), then the smaller tau_ignore. When no evaluated setting reaches
the floor the result is flagged infeasible and carries the best-accuracy
setting instead.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import EEConfig, build_trace
from .metrics import evaluate_2d


@dataclass
class TuneGrid:
    tau_ignore_values: np.ndarray
    tau_acc_values: np.ndarray

    def __post_init__(self):
        self.tau_ignore_values = np.asarray(self.tau_ignore_values, dtype=np.float64)
        self.tau_acc_values = np.asarray(self.tau_acc_values, dtype=np.float64)
        for name, vals, lo in (("tau_ignore_values", self.tau_ignore_values, 0.0),
                               ("tau_acc_values", self.tau_acc_values, 0.0)):
            if vals.size == 0:
                raise ValueError(f"{name} is empty")
            if np.any(np.diff(vals) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
            if vals[0] < lo:
                raise ValueError(f"{name} must be >= {lo}")
        if self.tau_ignore_values[-1] > 1.0:
            raise ValueError("tau_ignore_values must be <= 1")

    @property
    def size(self) -> int:
        return self.tau_ignore_values.size * self.tau_acc_values.size


def default_grid() -> TuneGrid:
    """10 ignore levels x 25 log-spaced acceptance levels (~250 settings)."""
    return TuneGrid(
        tau_ignore_values=np.round(np.arange(0.0, 1.0, 0.1), 10),
        tau_acc_values=np.geomspace(0.1, 50.0, 25),
    )


@dataclass
class Evaluation:
    tau_ignore: float
    tau_acc: float
    accuracy: float
    speedup_total: float
    total_ops: int

    def key(self) -> tuple:
        # max speed-up, ties to larger tau_acc, then smaller tau_ignore
        return (self.speedup_total, self.tau_acc, -self.tau_ignore)

    def accuracy_key(self) -> tuple:
        return (self.accuracy, self.tau_acc, -self.tau_ignore)


@dataclass
class TuneResult:
    best_cfg: EEConfig
    best_speedup: float
    best_accuracy: float
    evaluations: int
    feasible: bool
    acc_thr: float
    evaluated: list[Evaluation] = field(default_factory=list)
    grid: TuneGrid | None = None
    heatmap_accuracy: np.ndarray | None = None  # (n_tau_ignore, n_tau_acc)
    heatmap_speedup: np.ndarray | None = None

    def to_json(self) -> dict:
        return {
            "best_cfg": {"tau_ignore": self.best_cfg.tau_ignore, "tau_acc": self.best_cfg.tau_acc},
            "best_speedup": self.best_speedup,
            "best_accuracy": self.best_accuracy,
            "evaluations": self.evaluations,
            "feasible": self.feasible,
            "acc_thr": self.acc_thr,
        }


def _evaluate_cells(dataset, traces, cells, threads=None) -> list[Evaluation]:
    def one(cell):
        ti, ta = cell
        report = evaluate_2d(dataset, EEConfig(tau_ignore=ti, tau_acc=ta), traces=traces)
        return Evaluation(tau_ignore=ti, tau_acc=ta, accuracy=report.accuracy,
                          speedup_total=report.speedup_total, total_ops=report.total_ops)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, cells))
    return [one(cell) for cell in cells]


def _reduce(evaluated: list[Evaluation], acc_thr: float):
    feasible = [e for e in evaluated if e.accuracy >= acc_thr]
    if feasible:
        return max(feasible, key=Evaluation.key), True
    return max(evaluated, key=Evaluation.accuracy_key), False


def grid_search(dataset, grid: TuneGrid, acc_thr: float, threads: int | None = None) -> TuneResult:
    """Evaluate every grid cell; deterministic reduction to the best feasible one."""
    if not dataset:
        raise ValueError("empty dataset")
    if not 0.0 <= acc_thr <= 1.0:
        raise ValueError(f"acc_thr must be in [0, 1], got {acc_thr}")
    traces = [build_trace(g) for g in dataset]
    cells = [(float(ti), float(ta))
             for ti in grid.tau_ignore_values for ta in grid.tau_acc_values]
    evaluated = _evaluate_cells(dataset, traces, cells, threads=threads)
    best, feasible = _reduce(evaluated, acc_thr)

    n_ti, n_ta = grid.tau_ignore_values.size, grid.tau_acc_values.size
    acc_map = np.array([e.accuracy for e in evaluated]).reshape(n_ti, n_ta)
    spd_map = np.array([e.speedup_total for e in evaluated]).reshape(n_ti, n_ta)
    return TuneResult(
        best_cfg=EEConfig(tau_ignore=best.tau_ignore, tau_acc=best.tau_acc),
        best_speedup=best.speedup_total,
        best_accuracy=best.accuracy,
        evaluations=len(evaluated),
        feasible=feasible,
        acc_thr=acc_thr,
        evaluated=evaluated,
        grid=grid,
        heatmap_accuracy=acc_map,
        heatmap_speedup=spd_map,
    )


def refine_search(dataset, bounds, acc_thr: float, budget: int,
                  threads: int | None = None) -> TuneResult:
    """Coarse-to-fine 3x3 search within bounds = ((ti_lo, ti_hi), (ta_lo, ta_hi)).

    Each stage evaluates a 3x3 grid, then halves both spans around the
    best cell seen so far (best feasible if any, else best accuracy) and
    repeats while another 9 evaluations fit in the budget.
    """
    if budget < 9:
        raise ValueError(f"budget must be >= 9, got {budget}")
    if not dataset:
        raise ValueError("empty dataset")
    (ti_lo, ti_hi), (ta_lo, ta_hi) = bounds
    if not (0.0 <= ti_lo < ti_hi <= 1.0) or not (0.0 <= ta_lo < ta_hi):
        raise ValueError(f"bad bounds {bounds}")
    traces = [build_trace(g) for g in dataset]

    evaluated: list[Evaluation] = []
    ti_span, ta_span = ti_hi - ti_lo, ta_hi - ta_lo
    center = ((ti_lo + ti_hi) / 2.0, (ta_lo + ta_hi) / 2.0)
    while len(evaluated) + 9 <= budget:
        lo_ti = max(min(center[0] - ti_span / 2.0, ti_hi - ti_span), ti_lo)
        lo_ta = max(min(center[1] - ta_span / 2.0, ta_hi - ta_span), ta_lo)
        cells = [(float(ti), float(ta))
                 for ti in np.linspace(lo_ti, lo_ti + ti_span, 3)
                 for ta in np.linspace(lo_ta, lo_ta + ta_span, 3)]
        evaluated.extend(_evaluate_cells(dataset, traces, cells, threads=threads))
        best, _ = _reduce(evaluated, acc_thr)
        center = (best.tau_ignore, best.tau_acc)
        ti_span /= 2.0
        ta_span /= 2.0

    best, feasible = _reduce(evaluated, acc_thr)
    return TuneResult(
        best_cfg=EEConfig(tau_ignore=best.tau_ignore, tau_acc=best.tau_acc),
        best_speedup=best.speedup_total,
        best_accuracy=best.accuracy,
        evaluations=len(evaluated),
        feasible=feasible,
        acc_thr=acc_thr,
        evaluated=evaluated,
    )


def write_tune_heatmap_csv(grid: TuneGrid, matrix: np.ndarray, path) -> None:
    r"""Rows = tau_ignore, columns = tau_acc, `tau_ignore\tau_acc` corner header."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_ignore\\tau_acc"] + [repr(v) for v in grid.tau_acc_values.tolist()])
        for i, ti in enumerate(grid.tau_ignore_values.tolist()):
            writer.writerow([repr(ti)] + [repr(v) for v in matrix[i].tolist()])


def write_evaluations_csv(evaluated: list[Evaluation], path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_ignore", "tau_acc", "accuracy", "speedup_total", "total_ops"])
        for e in evaluated:
            writer.writerow([repr(e.tau_ignore), repr(e.tau_acc),
                             repr(e.accuracy), repr(e.speedup_total), e.total_ops])

"""Load solver-harness result CSVs and render the comparison figure.

The input schema is the harness contract:
experiment,algorithm,iter,trial,gs_mse,raw_mse,se_mse,ortho_corr,kurtosis,seed
with one row per trial per iteration plus prediction rows marked trial=SE.
Simulated curves are drawn as markers (mean over trials with a std band),
predictions as lines, MSE on a dB axis floored at -80 dB so noiseless runs
that reach exactly zero stay plottable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

EXPECTED_HEADER = ("experiment,algorithm,iter,trial,gs_mse,raw_mse,"
                   "se_mse,ortho_corr,kurtosis,seed")
DB_FLOOR = -80.0


class PlotDataError(ValueError):
    """A CSV does not match the harness schema or holds no usable rows."""


@dataclass
class RunData:
    """One experiment's curves: simulated trials plus the prediction."""

    label: str
    algorithm: str
    iters: np.ndarray       # (T,)
    sim_mean: np.ndarray    # (T,) empty when the CSV is prediction-only
    sim_std: np.ndarray
    se_mse: np.ndarray      # (T,)

    @property
    def has_trials(self) -> bool:
        return self.sim_mean.size > 0


@dataclass
class PlotSpec:
    csv_paths: list
    labels: list = field(default_factory=list)
    out_path: str = "fig.png"
    y_mode: str = "db"

    def __post_init__(self):
        if not self.csv_paths:
            raise PlotDataError("no CSV paths given")
        if self.labels and len(self.labels) != len(self.csv_paths):
            raise PlotDataError(
                f"{len(self.labels)} labels for {len(self.csv_paths)} CSVs")
        if self.y_mode != "db":
            raise PlotDataError(f"unsupported y-axis mode {self.y_mode!r}")


def load_run(path, label=None) -> RunData:
    """Parse one result CSV into per-iteration curves."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != EXPECTED_HEADER:
            raise PlotDataError(
                f"{path}: header {header!r} does not match the harness schema")
        trials = {}
        se_rows = {}
        algorithm = ""
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != 10:
                raise PlotDataError(f"{path}:{lineno}: expected 10 columns")
            algorithm = parts[1]
            it = int(parts[2])
            if parts[3] == "SE":
                se_rows[it] = float(parts[6])
            else:
                trials.setdefault(it, []).append(float(parts[4]))
    if not se_rows and not trials:
        raise PlotDataError(f"{path}: no data rows")
    iters = sorted(se_rows if se_rows else trials)
    se = np.array([se_rows.get(t, np.nan) for t in iters])
    if trials:
        sim_mean = np.array([np.mean(trials[t]) for t in iters])
        sim_std = np.array([np.std(trials[t], ddof=1) if len(trials[t]) > 1 else 0.0
                            for t in iters])
    else:
        sim_mean = np.array([])
        sim_std = np.array([])
    return RunData(label=label or algorithm, algorithm=algorithm,
                   iters=np.array(iters), sim_mean=sim_mean, sim_std=sim_std,
                   se_mse=se)


def to_db(mse):
    return 10.0 * np.log10(np.maximum(np.asarray(mse, dtype=float), 10.0 ** (DB_FLOOR / 10.0)))


def render(spec: PlotSpec):
    """Draw the figure described by `spec`, save it, return the Figure.

    Read-only over its inputs and deterministic for identical CSVs.
    """
    labels = spec.labels or [None] * len(spec.csv_paths)
    runs = [load_run(p, lab) for p, lab in zip(spec.csv_paths, labels)]
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, run in enumerate(runs):
        color = colors[i % len(colors)]
        if run.has_trials:
            ax.errorbar(run.iters, to_db(run.sim_mean),
                        yerr=_db_band(run.sim_mean, run.sim_std),
                        fmt="o", ms=4, capsize=2, color=color,
                        linestyle="none", label=f"{run.label} (sim)")
        keep = ~np.isnan(run.se_mse)
        ax.plot(run.iters[keep], to_db(run.se_mse[keep]), "-", color=color,
                label=f"{run.label} (SE)")
    ax.set_xlabel("iteration")
    ax.set_ylabel("MSE (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(spec.out_path, dpi=150)
    return fig


def _db_band(mean, std):
    """Asymmetric dB error band for a mean +- std in linear units."""
    lo = to_db(mean) - to_db(np.maximum(mean - std, 10.0 ** (DB_FLOOR / 10.0)))
    hi = to_db(mean + std) - to_db(mean)
    return np.vstack([lo, hi])

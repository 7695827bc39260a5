"""Experiment orchestration: seeded parallel trials, aggregation, CSV/JSON.

Every trial derives its generator from SeedSequence(config seed, trial index),
so trial i is reproducible in isolation and independent of how many trials
run.  Aggregation is an ordered fold over trial index; CSV bytes are
deterministic for a fixed config.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import ttest_ind

from .algorithms import run_algorithm, spec_from_config
from .errors import ConfigError, DivergenceError, ExperimentFailure
from .model import ExperimentConfig, config_to_dict, build_system
from .state_evolution import SeTrajectory, se_prediction

CSV_COLUMNS = ("experiment", "algorithm", "iter", "trial", "gs_mse", "raw_mse",
               "se_mse", "ortho_corr", "kurtosis", "seed")
CSV_HEADER = ",".join(CSV_COLUMNS)


@dataclass
class RunResult:
    """Aggregated output of one experiment."""

    config: ExperimentConfig
    experiment: str
    trial_seeds: list
    gs_mse: np.ndarray        # (completed trials, iterations)
    raw_mse: np.ndarray
    ortho_corr: np.ndarray
    kurtosis: np.ndarray
    se: SeTrajectory
    diverged: int
    wall_clock: float

    @property
    def iterations(self) -> int:
        return self.config.iterations

    @property
    def completed(self) -> int:
        return self.gs_mse.shape[0]

    def aggregate_rows(self):
        """Per-iteration summary: means/stds over completed trials plus the
        SE prediction."""
        se_mse = self.se.gs_mse
        rows = []
        for t in range(self.iterations):
            row = {"iter": t + 1, "se_mse": float(se_mse[t])}
            if self.completed:
                row.update({
                    "mean_gs_mse": float(np.mean(self.gs_mse[:, t])),
                    "std_gs_mse": float(np.std(self.gs_mse[:, t], ddof=1)) if self.completed > 1 else 0.0,
                    "mean_raw_mse": float(np.mean(self.raw_mse[:, t])),
                    "mean_ortho_corr": float(np.mean(self.ortho_corr[:, t])),
                    "mean_kurtosis": float(np.mean(self.kurtosis[:, t])),
                })
            rows.append(row)
        return rows


def trial_seed_sequence(seed: int, trial: int) -> np.random.SeedSequence:
    """Per-index seed derivation; independent of the total trial count."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(trial,))


def _run_trial(args):
    cfg, trial, spectrum_kind = args
    ss = trial_seed_sequence(cfg.seed, trial)
    seed_val = int(ss.generate_state(1, np.uint64)[0])
    rng = np.random.default_rng(ss)
    system = build_system(cfg, rng, spectrum_kind=spectrum_kind, seed=seed_val)
    spec = spec_from_config(cfg)
    try:
        traj = run_algorithm(system, spec, rng)
    except DivergenceError as err:
        return trial, seed_val, None, err.iteration
    return trial, seed_val, (traj.gs_mse, traj.raw_mse, traj.ortho_corr, traj.kurtosis), None


def run_experiment(cfg: ExperimentConfig, threads: int = 1,
                   experiment: str = "run",
                   spectrum_kind: str = "geometric") -> RunResult:
    """Run SE once plus `trials` seeded simulations and aggregate.

    Diverged trials are counted and excluded from the aggregate; if every
    trial diverges the experiment fails.  algorithm = "se" skips simulation
    entirely.
    """
    start = time.time()
    se = se_prediction(cfg, cfg.iterations)
    t_count = 0 if cfg.algorithm == "se" else cfg.trials
    shape = (0, cfg.iterations)
    arrays = {k: np.zeros(shape) for k in ("gs", "raw", "ortho", "kurt")}
    seeds, rows, diverged = [], [], 0
    jobs = [(cfg, i, spectrum_kind) for i in range(t_count)]
    if threads > 1 and jobs:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_trial, jobs))
    else:
        outcomes = [_run_trial(j) for j in jobs]
    for trial, seed_val, payload, _div_iter in outcomes:
        seeds.append(seed_val)
        if payload is None:
            diverged += 1
            continue
        rows.append(payload)
    if t_count and not rows:
        raise ExperimentFailure(f"all {t_count} trials diverged")
    if rows:
        arrays = {
            "gs": np.vstack([r[0] for r in rows]),
            "raw": np.vstack([r[1] for r in rows]),
            "ortho": np.vstack([r[2] for r in rows]),
            "kurt": np.vstack([r[3] for r in rows]),
        }
    return RunResult(config=cfg, experiment=experiment, trial_seeds=seeds,
                     gs_mse=arrays["gs"], raw_mse=arrays["raw"],
                     ortho_corr=arrays["ortho"], kurtosis=arrays["kurt"],
                     se=se, diverged=diverged, wall_clock=time.time() - start)


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def result_to_csv(result: RunResult) -> str:
    """Fixed-schema CSV: one row per trial per iteration, then SE rows.

    SE rows carry trial = "SE" with the predicted gs/raw MSE; their
    diagnostic columns are zero (never NaN).
    """
    cfg = result.config
    lines = [CSV_HEADER]
    se_mse = result.se.gs_mse
    se_raw = result.se.raw_mse
    for j in range(result.completed):
        for t in range(result.iterations):
            lines.append(",".join((
                result.experiment, cfg.algorithm, str(t + 1), str(j),
                _fmt(result.gs_mse[j, t]), _fmt(result.raw_mse[j, t]),
                _fmt(se_mse[t]), _fmt(result.ortho_corr[j, t]),
                _fmt(result.kurtosis[j, t]), str(result.trial_seeds[j]))))
    for t in range(result.iterations):
        lines.append(",".join((
            result.experiment, cfg.algorithm, str(t + 1), "SE",
            _fmt(se_mse[t]), _fmt(se_raw[t]), _fmt(se_mse[t]),
            "0", "0", str(cfg.seed))))
    return "\n".join(lines) + "\n"


def write_result(result: RunResult, csv_path, json_path=None):
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(result_to_csv(result))
    if json_path is not None:
        sidecar = {
            "experiment": result.experiment,
            "config": config_to_dict(result.config),
            "diverged_trials": result.diverged,
            "completed_trials": result.completed,
            "trial_seeds": result.trial_seeds,
            "wall_clock_seconds": result.wall_clock,
            "aggregate": result.aggregate_rows(),
        }
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2)
            fh.write("\n")


@dataclass
class CsvRun:
    """Per-trial gs_mse matrix plus SE curve parsed back from a result CSV."""

    experiment: str
    algorithm: str
    gs_mse: np.ndarray        # (trials, iterations)
    se_mse: np.ndarray        # (iterations,)


def read_csv_run(path) -> CsvRun:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected CSV schema {header!r}")
        trial_rows = {}
        se_rows = {}
        experiment = algorithm = ""
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != len(CSV_COLUMNS):
                raise ConfigError(f"{path}: malformed row {line!r}")
            experiment, algorithm = parts[0], parts[1]
            it = int(parts[2])
            if parts[3] == "SE":
                se_rows[it] = float(parts[6])
            else:
                trial_rows.setdefault(int(parts[3]), {})[it] = float(parts[4])
    if not se_rows:
        raise ConfigError(f"{path}: no SE rows found")
    iters = sorted(se_rows)
    se = np.array([se_rows[t] for t in iters])
    if trial_rows:
        trials = sorted(trial_rows)
        gs = np.array([[trial_rows[j][t] for t in iters] for j in trials])
    else:
        gs = np.zeros((0, len(iters)))
    return CsvRun(experiment=experiment, algorithm=algorithm, gs_mse=gs, se_mse=se)


def compare_runs(a, b, level: float = 0.05):
    """Per-iteration MSE ratio of run a over run b in dB plus a Welch flag.

    Accepts RunResult or CsvRun.  Positive dB means a is worse (higher MSE).
    """
    ga, gb = a.gs_mse, b.gs_mse
    if ga.shape[1] != gb.shape[1]:
        raise ValueError(f"iteration count mismatch: {ga.shape[1]} vs {gb.shape[1]}")
    out = []
    for t in range(ga.shape[1]):
        xa, xb = ga[:, t], gb[:, t]
        ma, mb = float(np.mean(xa)), float(np.mean(xb))
        ratio_db = 10.0 * np.log10(max(ma, 1e-300) / max(mb, 1e-300))
        if len(xa) > 1 and len(xb) > 1 and (np.std(xa) > 0 or np.std(xb) > 0):
            _, p = ttest_ind(xa, xb, equal_var=False)
            p = float(p)
        else:
            p = 1.0
        out.append({"iter": t + 1, "ratio_db": float(ratio_db),
                    "p_value": p, "significant": p < level})
    return out


# ---------------------------------------------------------------------------
# property selftest: orthogonality and Gaussianity of the iteration errors


def run_selftest(n: int = 1024, seeds: int = 5, iterations: int = 10,
                 kappa: float = 10.0, lam: float = 0.25, snr_db: float = 45.0,
                 verbose: bool = True) -> bool:
    """Empirical check of the error-orthogonality and Gaussianity claims.

    Orthogonalized runs must keep every |(1/n) f_in(t') . f_out(t)| and
    |(1/n) x . f_out(t)| below 5/sqrt(n) on seed average and the
    seed-averaged excess kurtosis of input residuals below the asymptotic
    0.2 bound (widened to the kurtosis sampling floor 4*sqrt(24/(n*seeds))
    when a quick run is underpowered for it); the same correlation
    statistic with the orthogonalization disabled (B = 0) must break its
    bound.
    """
    cfg = ExperimentConfig(n=n, m_over_n=0.65, kappa=kappa, lam=lam,
                           snr_db=snr_db, iterations=iterations, trials=seeds,
                           algorithm="oamp-w", b_strategy="integral", seed=20240)
    bound = 5.0 / np.sqrt(n)
    kurt_bound = max(0.2, 4.0 * np.sqrt(24.0 / (n * seeds)))
    cross = np.zeros((iterations, iterations))
    sig = np.zeros(iterations)
    kurt = np.zeros(iterations)
    cross_raw = np.zeros((iterations, iterations))
    for i in range(seeds):
        rng = np.random.default_rng(trial_seed_sequence(cfg.seed, i))
        system = build_system(cfg, rng, seed=i)
        spec = spec_from_config(cfg, track_cross=True)
        traj = run_algorithm(system, spec, rng)
        cross += np.abs(traj.cross_corr)
        sig += np.abs(traj.signal_corr)
        kurt += traj.kurtosis
        em_cfg = cfg.with_overrides(b_strategy="none")
        em_spec = spec_from_config(em_cfg, track_cross=True)
        em = run_algorithm(system, em_spec, np.random.default_rng(trial_seed_sequence(cfg.seed, i)))
        cross_raw += np.abs(em.cross_corr)
    cross /= seeds
    sig /= seeds
    kurt = np.abs(kurt) / seeds
    cross_raw /= seeds
    mask = np.tril(np.ones_like(cross, dtype=bool))  # t_in <= t_out entries
    ortho_ok = bool(np.all(cross[mask.T] < bound))
    max_cross = float(np.max(cross[mask.T]))
    sig_ok = bool(np.all(sig < bound))
    kurt_ok = bool(np.all(kurt < kurt_bound))
    em_breaks = bool(np.max(cross_raw[mask.T]) > bound)
    checks = [
        ("error orthogonality", ortho_ok, f"max |corr| {max_cross:.4f} vs bound {bound:.4f}"),
        ("signal orthogonality", sig_ok, f"max {float(np.max(sig)):.4f} vs bound {bound:.4f}"),
        ("residual gaussianity", kurt_ok,
         f"max |avg kurtosis| {float(np.max(kurt)):.4f} vs {kurt_bound:.3f}"),
        ("un-orthogonalized control breaks the bound", em_breaks,
         f"max |corr| {float(np.max(cross_raw[mask.T])):.4f}"),
    ]
    all_ok = all(ok for _, ok, _ in checks)
    if verbose:
        for name, ok, detail in checks:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok

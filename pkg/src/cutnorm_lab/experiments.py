"""Monte Carlo verification campaigns, trial persistence and reports.

Every campaign draws trials with seeds derived from (master seed,
experiment name, k, trial index), so results are independent of execution
order and worker count; ``trials.csv`` is byte-identical across reruns.
The JSON report carries per-k aggregates that are recomputable bit-for-bit
from the persisted trial records (``verify_report`` does exactly that),
plus the bound values, clamped probabilities and pass/fail flags.

Probability guarantees are often vacuous at desk-scale k (raw values above
1 or below 0); reports print both the raw and the clamped-to-[0,1] values
and acceptance only requires the empirical rate to stay below the clamped
bound plus a Wilson half-width.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as _rng
from .concentration import (
    ConcentrationParams,
    bplus_upper_check,
    bs12_check,
    delta_U,
    dispersion_tail_bound,
    l0_probability_bound,
    theorem_bound,
)
from .cutdist import AnnealBudget, blowup, cut_distance_upper, discretize_kernel
from .cutnorm import (
    MAX_EXACT_N,
    cut_norm_exact,
    cut_norm_exact_values_batch,
    cut_norm_heuristic,
    plus_exact_values_batch,
)
from .kernels import (
    Kernel,
    SamplePoints,
    StepKernel,
    draw_sample,
    kernel_from_json,
    sample_matrix,
)
from .truncation import (
    truncation_l1_error_bound,
    truncation_l1_error_exact,
    truncation_l1_mass_above,
)
from .vkernel import (
    VectorKernelNorms,
    build_epsilon_net,
    draw_vector_sample,
    vector_cut_norm_exact,
    vector_cut_norm_net,
    vector_cut_norm_reference_upper,
    vector_lp_norm,
    vector_theorem_bounds,
)

EXPERIMENTS = (
    "first-lemma",
    "second-lemma",
    "systematic-error",
    "dispersion",
    "l0",
    "appendix",
    "vector",
    "truncation",
    "almost-sure",
)

CSV_COLUMNS = (
    "experiment",
    "k",
    "trial_index",
    "seed",
    "sample_cut_norm",
    "method",
    "reference_cut_norm",
    "deviation",
    "bound_rhs",
    "violated",
    "auxiliary",
)

WORKERS_ENV_VAR = "CUTNORM_LAB_WORKERS"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    experiment: str
    kernel: Kernel
    k_grid: tuple
    p: float
    params: ConcentrationParams
    trials: int
    master_seed: int
    workers: int = 1
    output_dir: str | None = None
    m_discretize: int = 16
    q_values: tuple = (2, 3)
    nested: bool = True
    anneal: AnnealBudget = field(default_factory=AnnealBudget)
    vector_components: tuple = ()
    vector_blocks: int = 6
    vector_dim: int = 2
    vector_epsilon: float = 0.25
    vector_sphere_probes: int = 10**4
    vector_lower_trials: int = 0
    mean_trials: int = 20000
    bplus_trials: int = 200
    f_grid_points: int = 12

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        self.k_grid = tuple(int(k) for k in self.k_grid)
        if list(self.k_grid) != sorted(self.k_grid):
            raise ConfigError("k_grid must be sorted ascending")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.experiment != "truncation" and not self.k_grid:
            raise ConfigError("k_grid must not be empty")
        if self.experiment == "first-lemma" and not self.kernel.nonneg:
            if max(self.k_grid) > 24:
                raise ConfigError("signed kernels need exact norms: k_grid is capped at 24")
        if self.experiment in ("second-lemma", "almost-sure") and not self.kernel.nonneg:
            raise ConfigError(f"{self.experiment} campaigns require a nonnegative kernel")

    def to_json(self) -> dict:
        return {
            "experiment": self.experiment,
            "kernel": self.kernel.to_json(),
            "k_grid": list(self.k_grid),
            "p": self.p,
            "params": self.params.to_json(),
            "trials": self.trials,
            "master_seed": self.master_seed,
            "workers": self.workers,
            "output_dir": self.output_dir,
            "m_discretize": self.m_discretize,
            "q_values": list(self.q_values),
            "nested": self.nested,
            "anneal": self.anneal.to_json(),
            "vector_components": [c.to_json() for c in self.vector_components],
            "vector_blocks": self.vector_blocks,
            "vector_dim": self.vector_dim,
            "vector_epsilon": self.vector_epsilon,
            "vector_sphere_probes": self.vector_sphere_probes,
            "vector_lower_trials": self.vector_lower_trials,
            "mean_trials": self.mean_trials,
            "bplus_trials": self.bplus_trials,
            "f_grid_points": self.f_grid_points,
        }

    @staticmethod
    def from_json(obj: dict) -> "ExperimentConfig":
        return ExperimentConfig(
            experiment=obj["experiment"],
            kernel=kernel_from_json(obj["kernel"]),
            k_grid=tuple(obj["k_grid"]),
            p=float(obj["p"]),
            params=ConcentrationParams.from_json(obj["params"]),
            trials=int(obj["trials"]),
            master_seed=int(obj["master_seed"]),
            workers=int(obj.get("workers", 1)),
            output_dir=obj.get("output_dir"),
            m_discretize=int(obj.get("m_discretize", 16)),
            q_values=tuple(obj.get("q_values", (2, 3))),
            nested=bool(obj.get("nested", True)),
            anneal=AnnealBudget.from_json(obj["anneal"]) if "anneal" in obj else AnnealBudget(),
            vector_components=tuple(
                kernel_from_json(c) for c in obj.get("vector_components", [])
            ),
            vector_blocks=int(obj.get("vector_blocks", 6)),
            vector_dim=int(obj.get("vector_dim", 2)),
            vector_epsilon=float(obj.get("vector_epsilon", 0.25)),
            vector_sphere_probes=int(obj.get("vector_sphere_probes", 10**4)),
            vector_lower_trials=int(obj.get("vector_lower_trials", 0)),
            mean_trials=int(obj.get("mean_trials", 20000)),
            bplus_trials=int(obj.get("bplus_trials", 200)),
            f_grid_points=int(obj.get("f_grid_points", 12)),
        )


@dataclass
class TrialRecord:
    k: int
    trial_index: int
    seed: int
    sample_cut_norm: float
    method: str
    reference_cut_norm: float
    deviation: float
    bound_rhs: float
    violated: bool
    auxiliary: dict = field(default_factory=dict)


def trial_seed(master_seed: int, experiment: str, k: int, trial_index: int) -> int:
    return _rng.seed_for(master_seed, experiment, k, trial_index)


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need n >= 1")
    phat = successes / n
    denom = 1.0 + z**2 / n
    center = (phat + z**2 / (2 * n)) / denom
    margin = z * math.sqrt(phat * (1 - phat) / n + z**2 / (4 * n**2)) / denom
    return max(0.0, center - margin), min(1.0, center + margin)


def wilson_halfwidth(successes: int, n: int, z: float = 1.96) -> float:
    lo, hi = wilson_interval(successes, n, z)
    return (hi - lo) / 2.0


def clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


# ---------------------------------------------------------------------------
# per-trial workers
# ---------------------------------------------------------------------------


def sample_cut_norm_value(U: Kernel, coords: np.ndarray, seed: int = 0):
    """Cut norm of the k-sample, picking the path by sign structure.

    Nonnegative kernels use the grand-sum closed form (matrix-free when a
    rank-1 factor exists); signed kernels take the exact enumeration up to
    30 points and the heuristic beyond that.
    """
    k = len(coords)
    if U.nonneg:
        g = U.rank1_factor(coords)
        if g is not None:
            total = float(g.sum()) ** 2 - float((g * g).sum())
        else:
            total = sample_matrix(U, coords).grand_sum()
        return total / k**2, "nonneg-closed-form"
    W = sample_matrix(U, coords)
    if k <= MAX_EXACT_N:
        return cut_norm_exact(W).value, "exact"
    return cut_norm_heuristic(W, restarts=16, seed=seed).value, "heuristic"


def _draw_coords(seed: int, k: int) -> np.ndarray:
    return _rng.stream(seed, "coords").random(k)


def _first_lemma_trial(config: ExperimentConfig, k: int, idx: int) -> TrialRecord:
    seed = trial_seed(config.master_seed, config.experiment, k, idx)
    coords = _draw_coords(seed, k)
    value, method = sample_cut_norm_value(config.kernel, coords, seed)
    ref = config.kernel.cut_norm_reference().value
    deviation = value - ref
    upper = theorem_bound("first_upper", config.kernel, config.params, k)
    lower = theorem_bound("first_lower", config.kernel, config.params, k)
    violated_upper = deviation > upper.value
    violated_lower = deviation < -lower.value
    return TrialRecord(
        k=k,
        trial_index=idx,
        seed=seed,
        sample_cut_norm=value,
        method=method,
        reference_cut_norm=ref,
        deviation=deviation,
        bound_rhs=upper.value,
        violated=violated_upper or violated_lower,
        auxiliary={
            "violated_upper": violated_upper,
            "violated_lower": violated_lower,
            "lower_rhs": lower.value,
        },
    )


def _second_lemma_trial(config: ExperimentConfig, k: int, idx: int) -> TrialRecord:
    seed = trial_seed(config.master_seed, config.experiment, k, idx)
    coords = _draw_coords(seed, k)
    sample = sample_matrix(config.kernel, coords)
    u_m, charge = discretize_kernel(config.kernel, config.m_discretize)
    est = cut_distance_upper(u_m, sample, budget=config.anneal, seed=seed)
    dhat = est.upper + charge
    bound = theorem_bound("second", config.kernel, config.params, k)
    value, method = sample_cut_norm_value(config.kernel, coords, seed)
    ref = config.kernel.cut_norm_reference().value
    return TrialRecord(
        k=k,
        trial_index=idx,
        seed=seed,
        sample_cut_norm=value,
        method=method,
        reference_cut_norm=ref,
        deviation=value - ref,
        bound_rhs=bound.value,
        violated=dhat > bound.value,
        auxiliary={
            "dhat_upper": est.upper,
            "dhat_lower": est.lower,
            "discretization_charge": charge,
            "dhat_total": dhat,
            "upper_certified": est.upper_certified,
            "blowup_size": est.blowup_size,
        },
    )


def _systematic_trial(config: ExperimentConfig, k: int, idx: int) -> TrialRecord:
    seed = trial_seed(config.master_seed, config.experiment, k, idx)
    coords = _draw_coords(seed, k)
    value, method = sample_cut_norm_value(config.kernel, coords, seed)
    ref = config.kernel.cut_norm_reference().value
    upper = theorem_bound("systematic_upper", config.kernel, config.params, k)
    return TrialRecord(
        k=k,
        trial_index=idx,
        seed=seed,
        sample_cut_norm=value,
        method=method,
        reference_cut_norm=ref,
        deviation=value - ref,
        bound_rhs=upper.value,
        violated=False,
        auxiliary={},
    )


def _dispersion_trial(config: ExperimentConfig, k: int, idx: int) -> TrialRecord:
    seed = trial_seed(config.master_seed, config.experiment, k, idx)
    coords = _draw_coords(seed, k)
    value, method = sample_cut_norm_value(config.kernel, coords, seed)
    mean_est, mean_se = _dispersion_mean_estimate(config, k)
    threshold, prob = dispersion_tail_bound(config.kernel, config.params, k)
    widened = threshold + 3.0 * mean_se
    deviation = value - mean_est
    return TrialRecord(
        k=k,
        trial_index=idx,
        seed=seed,
        sample_cut_norm=value,
        method=method,
        reference_cut_norm=mean_est,
        deviation=deviation,
        bound_rhs=prob,
        violated=abs(deviation) >= widened,
        auxiliary={"threshold": threshold, "widened_threshold": widened, "mean_stderr": mean_se},
    )


_MEAN_CACHE: dict = {}


def _dispersion_mean_estimate(config: ExperimentConfig, k: int) -> tuple[float, float]:
    """Mean of the sample cut norm over an independent batch, with stderr."""
    key = (config.master_seed, config.kernel.to_json().__repr__(), k, config.mean_trials)
    if key in _MEAN_CACHE:
        return _MEAN_CACHE[key]
    values = np.empty(config.mean_trials)
    for t in range(config.mean_trials):
        seed = _rng.seed_for(config.master_seed, "dispersion-mean", k, t)
        coords = _draw_coords(seed, k)
        values[t], _ = sample_cut_norm_value(config.kernel, coords, seed)
    out = (float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values))))
    _MEAN_CACHE[key] = out
    return out


def _l0_trial(config: ExperimentConfig, k: int, idx: int) -> TrialRecord:
    seed = trial_seed(config.master_seed, config.experiment, k, idx)
    coords = _draw_coords(seed, k)
    points = SamplePoints(k=k, seed=seed, coords=coords)
    report = delta_U(config.kernel, points)
    in_l0 = report.in_l0(config.params.nu, config.params.gamma)
    bound = l0_probability_bound(
        config.kernel, config.params.p, config.params.nu, config.params.gamma, k
    )
    return TrialRecord(
        k=k,
        trial_index=idx,
        seed=seed,
        sample_cut_norm=math.nan,
        method="delta",
        reference_cut_norm=math.nan,
        deviation=report.delta_value,
        bound_rhs=bound,
        violated=not in_l0,
        auxiliary={"in_l0": in_l0},
    )


def _appendix_trial(config: ExperimentConfig, k: int, idx: int) -> TrialRecord:
    seed = trial_seed(config.master_seed, config.experiment, k, idx)
    coords = _draw_coords(seed, k)
    sample = sample_matrix(config.kernel, coords)
    gen = _rng.stream(seed, "appendix-sets")
    aux: dict = {}
    all_hold = True
    for q in config.q_values:
        r1 = [int(i) for i in np.nonzero(gen.random(k) < 0.5)[0]]
        r2 = [int(i) for i in np.nonzero(gen.random(k) < 0.5)[0]]
        res = bs12_check(sample, r1, r2, q, seed=seed)
        aux[f"bs12_holds_q{q}"] = res.holds
        aux[f"bs12_slack_q{q}"] = res.rhs - res.lhs
        all_hold = all_hold and res.holds
        if idx < config.bplus_trials:
            bres = bplus_upper_check(sample, q)
            aux[f"bplus_holds_q{q}"] = bres.holds
            aux[f"bplus_slack_q{q}"] = bres.rhs - bres.lhs
            all_hold = all_hold and bres.holds
    value = cut_norm_exact(sample).value if k <= MAX_EXACT_N else math.nan
    return TrialRecord(
        k=k,
        trial_index=idx,
        seed=seed,
        sample_cut_norm=value,
        method="exact",
        reference_cut_norm=math.nan,
        deviation=math.nan,
        bound_rhs=math.nan,
        violated=not all_hold,
        auxiliary=aux,
    )


def _random_vector_instance(gen: np.random.Generator, n: int, d: int) -> np.ndarray:
    vals = gen.normal(size=(n, n, d))
    vals = np.triu(vals.transpose(2, 0, 1), 1)
    vals = vals + np.swapaxes(vals, 1, 2)
    return vals.transpose(1, 2, 0)


def _vector_trial(config: ExperimentConfig, k: int, idx: int) -> TrialRecord:
    from .vkernel import VectorStepKernel

    seed = trial_seed(config.master_seed, config.experiment, k, idx)
    gen = _rng.stream(seed, "vector-instance")
    d = config.vector_dim
    n = config.vector_blocks
    W = VectorStepKernel(d=d, n=n, values=_random_vector_instance(gen, n, d), zero_diagonal=True)
    exact = vector_cut_norm_exact(W)
    net = _vector_net_cached(d, config.vector_epsilon)
    net_value = vector_cut_norm_net(W, net)
    sandwich_ok = (
        net_value <= exact.value + 1e-12
        and exact.value <= net_value / (1.0 - config.vector_epsilon) + 1e-12
    )
    probes = gen.uniform(-1.0, 1.0, size=(config.vector_sphere_probes, d))
    probes /= np.abs(probes).max(axis=1, keepdims=True)
    mats = np.einsum("ijc,sc->sij", W.values, probes)
    sphere_max = float(cut_norm_exact_values_batch(mats).max())
    extreme_ok = sphere_max <= exact.value + 1e-9
    return TrialRecord(
        k=n,
        trial_index=idx,
        seed=seed,
        sample_cut_norm=exact.value,
        method="exact",
        reference_cut_norm=net_value,
        deviation=exact.value - net_value,
        bound_rhs=net_value / (1.0 - config.vector_epsilon),
        violated=not (sandwich_ok and extreme_ok),
        auxiliary={
            "sandwich_ok": sandwich_ok,
            "extreme_ok": extreme_ok,
            "sphere_max": sphere_max,
        },
    )


_NET_CACHE: dict = {}


def _vector_net_cached(d: int, epsilon: float):
    key = (d, epsilon)
    if key not in _NET_CACHE:
        _NET_CACHE[key] = build_epsilon_net(d, epsilon)
    return _NET_CACHE[key]


_VECTOR_REF_CACHE: dict = {}


def _vector_lower_refs(config: ExperimentConfig):
    key = (tuple(repr(c.to_json()) for c in config.vector_components), config.p)
    if key not in _VECTOR_REF_CACHE:
        comps = list(config.vector_components)
        cut_upper = vector_cut_norm_reference_upper(comps, m=24)
        norms = VectorKernelNorms(
            cut=cut_upper,
            l1=vector_lp_norm(comps, 1.0),
            lp=vector_lp_norm(comps, config.p),
        )
        _VECTOR_REF_CACHE[key] = norms
    return _VECTOR_REF_CACHE[key]


def _vector_lower_trial(config: ExperimentConfig, k: int, idx: int) -> TrialRecord:
    seed = _rng.seed_for(config.master_seed, "vector-lower", k, idx)
    comps = list(config.vector_components)
    _, W = draw_vector_sample(comps, k, seed)
    exact = vector_cut_norm_exact(W)
    norms = _vector_lower_refs(config)
    lower, _ = vector_theorem_bounds(norms, config.params, k, config.vector_dim)
    deviation = exact.value - norms.cut
    violated = deviation < -lower.value
    return TrialRecord(
        k=k,
        trial_index=idx,
        seed=seed,
        sample_cut_norm=exact.value,
        method="exact",
        reference_cut_norm=norms.cut,
        deviation=deviation,
        bound_rhs=lower.value,
        violated=violated,
        auxiliary={"phase": "lower-mc"},
    )


_TRIAL_FNS = {
    "first-lemma": _first_lemma_trial,
    "second-lemma": _second_lemma_trial,
    "systematic-error": _systematic_trial,
    "dispersion": _dispersion_trial,
    "l0": _l0_trial,
    "appendix": _appendix_trial,
    "vector": _vector_trial,
}


_WORKER_CONFIG: ExperimentConfig | None = None


def _init_worker(config_json: dict):
    global _WORKER_CONFIG
    _WORKER_CONFIG = ExperimentConfig.from_json(config_json)


def _run_task(task: tuple) -> TrialRecord:
    kind, k, idx = task
    config = _WORKER_CONFIG
    if kind == "trial":
        return _TRIAL_FNS[config.experiment](config, k, idx)
    if kind == "vector-lower":
        return _vector_lower_trial(config, k, idx)
    raise ValueError(f"unknown task kind {kind!r}")


def _effective_workers(config: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        return max(1, int(env))
    return max(1, config.workers)


def _run_tasks(config: ExperimentConfig, tasks: list) -> list[TrialRecord]:
    workers = _effective_workers(config)
    if workers == 1 or len(tasks) <= 1:
        _init_worker(config.to_json())
        records = [_run_task(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (4 * workers))
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(config.to_json(),)
        ) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=chunk))
    records.sort(key=lambda r: (r.k, r.auxiliary.get("phase", ""), r.trial_index))
    return records


# ---------------------------------------------------------------------------
# aggregation and reports
# ---------------------------------------------------------------------------


def aggregate_records(records: list[TrialRecord]) -> list[dict]:
    """Per-k aggregates, recomputable bit-for-bit from the records."""
    out = []
    for k in sorted({r.k for r in records}):
        group = [r for r in records if r.k == k]
        devs = np.array([r.deviation for r in group])
        values = np.array([r.sample_cut_norm for r in group])
        n = len(group)
        violations = sum(1 for r in group if r.violated)
        lo, hi = wilson_interval(violations, n)
        agg = {
            "k": k,
            "trials": n,
            "mean_deviation": float(np.mean(devs)) if not np.all(np.isnan(devs)) else None,
            "stderr_deviation": (
                float(np.std(devs, ddof=1) / math.sqrt(n)) if n > 1 and not np.any(np.isnan(devs)) else 0.0
            ),
            "mean_sample_cut_norm": (
                float(np.mean(values)) if not np.all(np.isnan(values)) else None
            ),
            "violation_count": violations,
            "violation_rate": violations / n,
            "wilson_lo": lo,
            "wilson_hi": hi,
        }
        bool_keys = sorted(
            key
            for key in set().union(*(r.auxiliary.keys() for r in group))
            if all(isinstance(r.auxiliary.get(key, False), bool) for r in group)
        )
        for key in bool_keys:
            agg[f"count_{key}"] = sum(1 for r in group if r.auxiliary.get(key, False))
        out.append(agg)
    return out


def _report_skeleton(config: ExperimentConfig, records: list[TrialRecord]) -> dict:
    return {
        "experiment": config.experiment,
        "config": config.to_json(),
        "per_k": aggregate_records(records),
        "flags": {},
        "pass": True,
        "failures": [],
    }


def _fail(report: dict, message: str):
    report["pass"] = False
    report["failures"].append(message)


def run_first_lemma(config: ExperimentConfig):
    records = _run_tasks(
        config, [("trial", k, i) for k in config.k_grid for i in range(config.trials)]
    )
    report = _report_skeleton(config, records)
    for agg in report["per_k"]:
        k = agg["k"]
        upper = theorem_bound("first_upper", config.kernel, config.params, k)
        lower = theorem_bound("first_lower", config.kernel, config.params, k)
        n = agg["trials"]
        for name, bound in (("upper", upper), ("lower", lower)):
            count = agg.get(f"count_violated_{name}", 0)
            rate = count / n
            allowed = clamp01(1.0 - bound.probability) + wilson_halfwidth(count, n)
            agg[f"{name}_bound"] = bound.value
            agg[f"{name}_probability_raw"] = bound.probability
            agg[f"{name}_exceptional_clamped"] = clamp01(1.0 - bound.probability)
            agg[f"{name}_rate_allowed"] = allowed
            if rate > allowed:
                _fail(report, f"k={k}: {name} violation rate {rate} exceeds {allowed}")
    return records, report


def run_second_lemma(config: ExperimentConfig):
    records = _run_tasks(
        config, [("trial", k, i) for k in config.k_grid for i in range(config.trials)]
    )
    report = _report_skeleton(config, records)
    u_m, charge = discretize_kernel(config.kernel, config.m_discretize)
    report["flags"]["discretization_charge"] = charge
    report["flags"]["probability_exponent"] = "phi*p (phi variant recorded in bounds aux)"
    medians = {}
    for agg in report["per_k"]:
        k = agg["k"]
        group = [r for r in records if r.k == k]
        dh = np.array([r.auxiliary["dhat_total"] for r in group])
        agg["median_dhat"] = float(np.median(dh))
        agg["mean_dhat"] = float(np.mean(dh))
        bound = theorem_bound("second", config.kernel, config.params, k)
        agg["bound"] = bound.value
        agg["bound_terms"] = {
            key: bound.aux[key]
            for key in (
                "truncation_term",
                "systematic_term",
                "dispersion_term",
                "bounded_distance_term",
            )
        }
        agg["certified"] = all(r.auxiliary["upper_certified"] for r in group)
        medians[k] = agg["median_dhat"]
        if agg["violation_count"] > 0:
            _fail(report, f"k={k}: {agg['violation_count']} trials exceeded the distance bound")
    ks = sorted(medians)
    inversions = sum(1 for a, b in zip(ks, ks[1:]) if medians[b] > medians[a] + 1e-12)
    report["flags"]["median_trend_inversions"] = inversions
    if inversions > 1:
        _fail(report, f"median dhat trend has {inversions} inversions (one tolerated)")
    return records, report


def run_systematic_error(config: ExperimentConfig):
    records = _run_tasks(
        config, [("trial", k, i) for k in config.k_grid for i in range(config.trials)]
    )
    report = _report_skeleton(config, records)
    ref = config.kernel.cut_norm_reference().value
    l1 = config.kernel.lp_norm(1.0)
    for agg in report["per_k"]:
        k = agg["k"]
        mean = agg["mean_sample_cut_norm"]
        se = agg["stderr_deviation"]
        lower_target = (k - 1) / k * ref
        agg["lower_target"] = lower_target
        agg["lower_ok"] = mean >= lower_target - 3.0 * se
        if config.kernel.nonneg:
            target = (k - 1) / k * l1
            z = (mean - target) / se if se > 0 else 0.0
            agg["nonneg_exact_target"] = target
            agg["nonneg_z_score"] = z
            if abs(z) > 4.0:
                _fail(report, f"k={k}: nonnegative mean z-score {z} outside +-4")
        upper = theorem_bound("systematic_upper", config.kernel, config.params, k)
        agg["upper_bound"] = upper.value
        agg["upper_lhs"] = mean - ref
        agg["upper_ok"] = (mean - ref) <= upper.value
        agg["upper_slack"] = upper.value - (mean - ref)
        if not agg["lower_ok"]:
            _fail(report, f"k={k}: mean below the expectation lower bound")
        if not agg["upper_ok"]:
            _fail(report, f"k={k}: mean deviation above the systematic upper bound")
    return records, report


def run_dispersion(config: ExperimentConfig):
    records = _run_tasks(
        config, [("trial", k, i) for k in config.k_grid for i in range(config.trials)]
    )
    report = _report_skeleton(config, records)
    for agg in report["per_k"]:
        k = agg["k"]
        threshold, prob = dispersion_tail_bound(config.kernel, config.params, k)
        n = agg["trials"]
        allowed = clamp01(prob) + wilson_halfwidth(agg["violation_count"], n)
        agg["threshold"] = threshold
        agg["probability_raw"] = prob
        agg["probability_clamped"] = clamp01(prob)
        agg["rate_allowed"] = allowed
        if agg["violation_rate"] > allowed:
            _fail(report, f"k={k}: dispersion tail rate {agg['violation_rate']} exceeds {allowed}")
    return records, report


def run_l0(config: ExperimentConfig):
    records = _run_tasks(
        config, [("trial", k, i) for k in config.k_grid for i in range(config.trials)]
    )
    report = _report_skeleton(config, records)
    for agg in report["per_k"]:
        k = agg["k"]
        bound = l0_probability_bound(
            config.kernel, config.params.p, config.params.nu, config.params.gamma, k
        )
        n = agg["trials"]
        in_rate = agg.get("count_in_l0", 0) / n
        halfwidth = wilson_halfwidth(agg.get("count_in_l0", 0), n)
        agg["probability_bound_raw"] = bound
        agg["probability_bound_clamped"] = clamp01(bound)
        agg["in_l0_rate"] = in_rate
        if in_rate < clamp01(bound) - halfwidth:
            _fail(report, f"k={k}: empirical good-event rate {in_rate} below bound {bound}")
    return records, report


def run_appendix(config: ExperimentConfig):
    records = _run_tasks(
        config, [("trial", k, i) for k in config.k_grid for i in range(config.trials)]
    )
    report = _report_skeleton(config, records)
    for agg in report["per_k"]:
        for q in config.q_values:
            n_bs = agg["trials"]
            agg[f"bs12_fail_q{q}"] = n_bs - agg.get(f"count_bs12_holds_q{q}", 0)
            n_bp = min(config.bplus_trials, agg["trials"])
            agg[f"bplus_fail_q{q}"] = n_bp - agg.get(f"count_bplus_holds_q{q}", 0)
            if agg[f"bs12_fail_q{q}"]:
                _fail(report, f"k={agg['k']} q={q}: bs12 inequality failures")
            if agg[f"bplus_fail_q{q}"]:
                _fail(report, f"k={agg['k']} q={q}: bplus inequality failures")
    return records, report


def run_vector(config: ExperimentConfig):
    tasks = [("trial", config.vector_blocks, i) for i in range(config.trials)]
    tasks += [
        ("vector-lower", k, i)
        for k in (config.k_grid if config.vector_lower_trials else ())
        for i in range(config.vector_lower_trials)
    ]
    records = _run_tasks(config, tasks)
    report = _report_skeleton(config, records)
    sandwich = [r for r in records if "sandwich_ok" in r.auxiliary]
    fails = sum(1 for r in sandwich if r.violated)
    report["flags"]["sandwich_failures"] = fails
    if fails:
        _fail(report, f"{fails} sandwich/extreme-point failures")
    lower = [r for r in records if r.auxiliary.get("phase") == "lower-mc"]
    if lower:
        by_k: dict = {}
        for r in lower:
            by_k.setdefault(r.k, []).append(r)
        for k, group in sorted(by_k.items()):
            count = sum(1 for r in group if r.violated)
            n = len(group)
            allowed = clamp01(3.0 * k ** (1.0 - config.params.gamma * config.params.p))
            allowed += wilson_halfwidth(count, n)
            report["flags"][f"lower_mc_rate_k{k}"] = count / n
            report["flags"][f"lower_mc_allowed_k{k}"] = allowed
            if count / n > allowed:
                _fail(report, f"k={k}: vector lower-bound violation rate above allowance")
    return records, report


def run_truncation(config: ExperimentConfig):
    """Deterministic f-grid sweep; rows are grid points, not random draws."""
    U = config.kernel
    p = config.p
    l1 = U.lp_norm(1.0)
    lp = U.lp_norm(p)
    records = []
    n_pts = config.f_grid_points
    for i in range(n_pts):
        frac = (i + 1) / n_pts
        f = l1 + frac * (8.0 * lp - l1)
        exact = truncation_l1_error_exact(U, f)
        mass = truncation_l1_mass_above(U, f)
        bound = truncation_l1_error_bound(U, p, f)
        violated = not (exact <= mass + 1e-12 and mass <= bound + 1e-12)
        records.append(
            TrialRecord(
                k=0,
                trial_index=i,
                seed=0,
                sample_cut_norm=math.nan,
                method="analytic",
                reference_cut_norm=math.nan,
                deviation=exact,
                bound_rhs=bound,
                violated=violated,
                auxiliary={"f": f, "mass_above": mass},
            )
        )
    report = _report_skeleton(config, records)
    masses = [r.auxiliary["mass_above"] for r in records]
    report["flags"]["mass_monotone_nonincreasing"] = all(
        b <= a + 1e-12 for a, b in zip(masses, masses[1:])
    )
    if any(r.violated for r in records):
        _fail(report, "truncation error chain violated on the f grid")
    if not report["flags"]["mass_monotone_nonincreasing"]:
        _fail(report, "tail mass failed to decrease along the f grid")
    return records, report


def _coarsen_sample(W: StepKernel, m: int) -> StepKernel:
    """Block-average a k-sample down to m blocks (m must divide k)."""
    k = W.n
    if k % m:
        raise ValueError(f"coarsening needs m | k, got m={m}, k={k}")
    t = k // m
    vals = W.values.reshape(m, t, m, t).mean(axis=(1, 3))
    vals = (vals + vals.T) / 2.0
    return StepKernel(m, vals)


def run_almost_sure(config: ExperimentConfig):
    """Single delta-hat trajectory over the k grid, nested or independent.

    Beyond the blow-up cap the sample is coarsened first and the coarsening
    charge is a heuristic (lower-bound) cut norm, so those trajectory values
    are estimates and are flagged as uncertified.
    """
    U = config.kernel
    u_m, charge = discretize_kernel(U, config.m_discretize)
    cap = config.anneal.blowup_cap
    max_k = max(config.k_grid)
    master_coords = None
    if config.nested:
        master_coords = _rng.stream(
            _rng.seed_for(config.master_seed, "almost-sure", 0, 0), "coords"
        ).random(max_k)
    records = []
    for k in config.k_grid:
        seed = trial_seed(config.master_seed, config.experiment, k, 0)
        if config.nested:
            coords = master_coords[:k]
        else:
            coords = _draw_coords(seed, k)
        sample = sample_matrix(U, coords)
        coarsen_charge = 0.0
        certified_note = True
        if math.lcm(config.m_discretize, k) <= cap:
            est = cut_distance_upper(u_m, sample, budget=config.anneal, seed=seed)
        else:
            m_c = math.gcd(k, cap) if math.gcd(k, cap) % config.m_discretize == 0 else config.m_discretize
            coarse = _coarsen_sample(sample, m_c)
            est = cut_distance_upper(u_m, coarse, budget=config.anneal, seed=seed)
            residue = StepKernel(k, sample.values - blowup(coarse, k // m_c).values)
            coarsen_charge = cut_norm_heuristic(residue, restarts=8, seed=seed).value
            certified_note = False
        dhat = est.upper + charge + coarsen_charge
        bound = theorem_bound("second", U, config.params, k)
        value, method = sample_cut_norm_value(U, coords, seed)
        records.append(
            TrialRecord(
                k=k,
                trial_index=0,
                seed=seed,
                sample_cut_norm=value,
                method=method,
                reference_cut_norm=U.cut_norm_reference().value,
                deviation=dhat,
                bound_rhs=bound.value,
                violated=dhat > bound.value,
                auxiliary={
                    "dhat_total": dhat,
                    "coarsening_charge": coarsen_charge,
                    "estimate_certified": certified_note,
                    "mode": "nested" if config.nested else "independent",
                },
            )
        )
    report = _report_skeleton(config, records)
    traj = [r.auxiliary["dhat_total"] for r in records]
    report["flags"]["trajectory"] = traj
    report["flags"]["any_uncertified"] = any(
        not r.auxiliary["estimate_certified"] for r in records
    )
    half = records[len(records) // 2 :]
    running_max = 0.0
    for r in half:
        running_max = max(running_max, r.auxiliary["dhat_total"])
        if running_max > r.bound_rhs:
            _fail(report, f"k={r.k}: trajectory running max {running_max} above bound")
    if any(not math.isfinite(t) for t in traj):
        _fail(report, "trajectory contains non-finite values")
    return records, report


_RUNNERS = {
    "first-lemma": run_first_lemma,
    "second-lemma": run_second_lemma,
    "systematic-error": run_systematic_error,
    "dispersion": run_dispersion,
    "l0": run_l0,
    "appendix": run_appendix,
    "vector": run_vector,
    "truncation": run_truncation,
    "almost-sure": run_almost_sure,
}


@dataclass
class RunResult:
    records: list
    report: dict


def run_experiment(config: ExperimentConfig) -> RunResult:
    start = time.monotonic()
    records, report = _RUNNERS[config.experiment](config)
    report["wall_clock_seconds"] = time.monotonic() - start
    if config.output_dir is not None:
        write_outputs(Path(config.output_dir), records, report)
    return RunResult(records=records, report=report)


# ---------------------------------------------------------------------------
# persistence and verification
# ---------------------------------------------------------------------------


def _format_float(x: float) -> str:
    return repr(float(x))


def write_outputs(out_dir: Path, records: list[TrialRecord], report: dict):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trials.csv", "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        experiment = report["experiment"]
        for r in records:
            writer.writerow(
                [
                    experiment,
                    r.k,
                    r.trial_index,
                    r.seed,
                    _format_float(r.sample_cut_norm),
                    r.method,
                    _format_float(r.reference_cut_norm),
                    _format_float(r.deviation),
                    _format_float(r.bound_rhs),
                    int(r.violated),
                    json.dumps(r.auxiliary, sort_keys=True, separators=(",", ":")),
                ]
            )
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_records(out_dir: Path) -> list[TrialRecord]:
    out_dir = Path(out_dir)
    records = []
    with open(out_dir / "trials.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                TrialRecord(
                    k=int(row["k"]),
                    trial_index=int(row["trial_index"]),
                    seed=int(row["seed"]),
                    sample_cut_norm=float(row["sample_cut_norm"]),
                    method=row["method"],
                    reference_cut_norm=float(row["reference_cut_norm"]),
                    deviation=float(row["deviation"]),
                    bound_rhs=float(row["bound_rhs"]),
                    violated=bool(int(row["violated"])),
                    auxiliary=json.loads(row["auxiliary"]),
                )
            )
    return records


def verify_report(out_dir: Path) -> list[str]:
    """Recompute aggregates from trials.csv and diff against report.json.

    Returns a list of mismatch descriptions; empty means the report is
    faithful to the persisted records.
    """
    out_dir = Path(out_dir)
    with open(out_dir / "report.json") as fh:
        report = json.load(fh)
    records = load_records(out_dir)
    recomputed = aggregate_records(records)
    mismatches = []
    stored = report.get("per_k", [])
    if len(stored) != len(recomputed):
        return [f"per_k length mismatch: {len(stored)} vs {len(recomputed)}"]
    for fresh, old in zip(recomputed, stored):
        for key, value in fresh.items():
            if key not in old:
                mismatches.append(f"k={fresh['k']}: missing aggregate {key}")
            elif old[key] != value:
                mismatches.append(f"k={fresh['k']}: {key} differs ({old[key]} vs {value})")
    return mismatches

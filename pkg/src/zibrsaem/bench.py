"""Monte Carlo study harness: replicate designs, fit, aggregate.

Each replicate ("job") is fully determined by ``(spec, job index)``: its
seeds are ``SeedSequence(spec.seed, spawn_key=(job,)).spawn(5)`` for the
data, the dropout pattern, the SAEM chains and the two importance-sampling
runs.  Finished jobs are appended to ``records.jsonl`` in the output
directory, tagged with a key built from the study settings and a hash of the
numerical source code, so an interrupted or repeated study resumes from the
stored records instead of refitting.
"""
from __future__ import annotations

import hashlib
import inspect
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import _kernels, _special, fim, inference, loglik, model, optimizer, sampler, saem, simulate
from .inference import lrt, wald
from .loglik import IsConfig, loglik_is
from .model import ZibrError, ZibrParams
from .saem import StepSchedule, fit
from .sampler import McmcConfig
from .simulate import SimConfig, generate, interpolate, mcar_dropout

log = logging.getLogger(__name__)

SCENARIOS = ("setting1", "setting2", "appendixA", "lrt_null", "wald_null", "power_grid")
DEFAULT_GRID = (-1.0, -0.5, 0.0, 0.5, 1.0)
MAX_FAILURE_RATE = 0.05

# starting point used for every simulated fit: (phi, a, b, alpha, beta, sd1, sd2)
STUDY_START = dict(phi=8.0, a=-0.3, b=-0.2, alpha=0.7, beta=0.8, sigma1=0.38, sigma2=0.31)


class StudyError(ZibrError):
    pass


@dataclass(frozen=True)
class StudySpec:
    """Settings of one Monte Carlo study.

    ``None`` fields take the scenario default: 50 individuals and an LRT for
    ``power_grid`` (100 otherwise), 10 chains for ``wald_null`` (5
    otherwise), 20% dropout for ``appendixA``, and Wald tests of the slopes
    for ``wald_null``.  ``overrides`` replaces entries of the scenario's true
    parameters (``sigma1``/``sigma2`` are SDs; ``alpha``/``beta`` scalars).
    """

    scenario: str
    replicates: int
    n_individuals: int | None = None
    t_per_individual: int = 10
    overrides: dict = field(default_factory=dict)
    k1: int = 750
    k2: int = 250
    chains: int | None = None
    is_samples: int = 500
    is_df: int = 5
    dropout: float | None = None
    interpolate: bool = False
    wald_params: tuple | None = None
    power_setting: int = 1
    grid: tuple = DEFAULT_GRID
    level: float = 0.05
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.scenario == "power_grid" and not self.grid:
            raise ValueError("power grid must be nonempty")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    # resolved settings -------------------------------------------------
    @property
    def N(self) -> int:
        if self.n_individuals is not None:
            return self.n_individuals
        return 50 if self.scenario == "power_grid" else 100

    @property
    def m(self) -> int:
        if self.chains is not None:
            return self.chains
        return 10 if self.scenario == "wald_null" else 5

    @property
    def dropout_fraction(self) -> float:
        if self.dropout is not None:
            return self.dropout
        return 0.2 if self.scenario == "appendixA" else 0.0

    @property
    def tests(self) -> tuple:
        """Parameters tested by Wald (on top of the LRT for LRT scenarios)."""
        if self.wald_params is not None:
            return tuple(self.wald_params)
        return ("alpha_treat", "beta_treat") if self.scenario == "wald_null" else ()

    @property
    def uses_lrt(self) -> bool:
        return self.scenario in ("lrt_null", "power_grid")

    @property
    def n_jobs(self) -> int:
        return self.replicates * (len(self.grid) if self.scenario == "power_grid" else 1)

    def true_params(self, grid_value=None) -> ZibrParams:
        base = {"setting1": simulate.SETTING1, "setting2": simulate.SETTING2,
                "appendixA": simulate.SETTING2, "lrt_null": simulate.NULL_COVARIATES,
                "wald_null": simulate.NULL_COVARIATES}.get(self.scenario)
        if self.scenario == "power_grid":
            base = simulate.power_setting(self.power_setting, grid_value)
        return apply_overrides(base, self.overrides)

    def key(self) -> str:
        """Hash identifying the study settings and the numerical code."""
        d = asdict(self)
        d.pop("workers")
        d.pop("replicates")
        blob = json.dumps(d, sort_keys=True, default=str) + code_fingerprint()
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def apply_overrides(params: ZibrParams, overrides: dict) -> ZibrParams:
    changes = {}
    for k, v in (overrides or {}).items():
        if k in ("sigma1", "sigma2"):
            changes[k + "_sq"] = float(v) ** 2
        elif k in ("alpha", "beta"):
            changes[k] = np.atleast_1d(np.asarray(v, dtype=float))
        elif k in ("phi", "a", "b", "sigma1_sq", "sigma2_sq"):
            changes[k] = float(v)
        else:
            raise ValueError(f"unknown parameter override {k!r}")
    return params.replace(**changes) if changes else params


def code_fingerprint() -> str:
    """Hash of every source file that can change a replicate's numbers."""
    h = hashlib.sha256()
    for mod in (_special, _kernels, model, sampler, optimizer, saem, fim, loglik, inference,
                simulate):
        h.update(Path(mod.__file__).read_bytes())
    for fn in (run_replicate, _start_for, _fit_record):
        h.update(inspect.getsource(fn).encode())
    h.update(json.dumps(STUDY_START, sort_keys=True).encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class MetricsRow:
    parameter: str
    true_value: float
    bias: float
    mae: float
    rmse: float
    n: int = 0
    sd: float = float("nan")
    median_se: float = float("nan")


def metrics(estimates, true_value: float, parameter: str = "") -> MetricsRow:
    """Bias, mean absolute error and root mean squared error of estimates."""
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ValueError("metrics need at least one estimate")
    diff = est - true_value
    sd = float(est.std(ddof=1)) if est.size > 1 else float("nan")
    return MetricsRow(parameter, float(true_value), float(diff.mean()),
                      float(np.abs(diff).mean()), float(np.sqrt(np.mean(diff ** 2))),
                      int(est.size), sd)


# --------------------------------------------------------------------------
# one replicate
# --------------------------------------------------------------------------

def _start_for(data) -> ZibrParams:
    s = STUDY_START
    return ZibrParams.from_sd(s["phi"], s["a"], s["b"], [s["alpha"]] * data.p,
                              [s["beta"]] * data.r, s["sigma1"], s["sigma2"])


def _fit_record(res) -> dict:
    est = res.estimates()
    out = dict(estimates=est, se=res.se_dict(), loglik=res.loglik, loglik_se=res.loglik_se,
               diagnostics={k: v for k, v in res.diagnostics.items()
                            if k not in ("acceptance_rates", "rw_scales")},
               acceptance=res.diagnostics.get("acceptance_rates"))
    return out


def run_replicate(spec: StudySpec, job: int) -> dict:
    """Simulate, fit and test one replicate of ``spec``."""
    per_point = spec.replicates
    g_idx, rep = divmod(job, per_point)
    grid_value = spec.grid[g_idx] if spec.scenario == "power_grid" else None
    truth = spec.true_params(grid_value)
    s_data, s_drop, s_fit, s_is1, s_is0 = np.random.SeedSequence(
        spec.seed, spawn_key=(job,)).spawn(5)

    data = generate(SimConfig(truth, spec.N, spec.t_per_individual, s_data))
    if spec.dropout_fraction > 0:
        data = mcar_dropout(data, spec.dropout_fraction, s_drop)
        if spec.interpolate:
            data = interpolate(data, spec.t_per_individual)
    schedule = StepSchedule(spec.k1, spec.k2)
    rec = dict(job=job, replicate=rep, grid_value=grid_value, n_obs=int(data.n_obs),
               zero_fraction=float(np.mean(data.y == 0)), truth=truth.as_dict(
                   data.x_names, data.z_names))
    res = fit(data, _start_for(data), schedule, m=spec.m, seed=s_fit)
    tests = {}
    if spec.uses_lrt:
        is_cfg = IsConfig(spec.is_samples, spec.is_df, s_is1)
        res.loglik, res.loglik_se = loglik_is(res.params, data, res.moments, is_cfg)
        reduced_data = data.select_covariates([], [])
        red = fit(reduced_data, _start_for(reduced_data), schedule, m=spec.m,
                  seed=s_fit, compute_fim=False)
        red.loglik, red.loglik_se = loglik_is(red.params, reduced_data, red.moments,
                                             replace(is_cfg, seed=s_is0))
        rec["reduced"] = _fit_record(red)
        t = lrt(res, red, df=data.p + data.r)
        tests["lrt"] = dict(statistic=t.statistic, raw=t.raw_statistic, df=t.df,
                            p_value=t.p_value, warning=t.warning)
    rec["full"] = _fit_record(res)
    se = res.se_dict()
    for name in spec.tests:
        if se is None or not se.get(name, 0) > 0:
            tests["wald_" + name] = None
            continue
        t = wald(res.estimates()[name], se[name])
        tests["wald_" + name] = dict(statistic=t.statistic, df=1, p_value=t.p_value)
    rec["tests"] = tests
    rec["status"] = "ok"
    return rec


def _safe_replicate(args) -> dict:
    spec, job = args
    t0 = time.perf_counter()
    try:
        rec = run_replicate(spec, job)
    except (ZibrError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rec = dict(job=job, status="failed", error=f"{type(exc).__name__}: {exc}")
    rec["seconds"] = round(time.perf_counter() - t0, 3)
    return rec


# --------------------------------------------------------------------------
# study driver and aggregation
# --------------------------------------------------------------------------

@dataclass
class StudyReport:
    spec: StudySpec
    key: str
    records: list
    metrics: list = field(default_factory=list)
    rejection: dict = field(default_factory=dict)
    power: list = field(default_factory=list)
    histograms: list = field(default_factory=list)
    n_ok: int = 0
    n_failed: int = 0

    def metrics_by_name(self) -> dict:
        return {r.parameter: r for r in self.metrics}


def _load_records(path: Path, key: str) -> dict:
    done = {}
    if not path.exists():
        return done
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                # a partially written last line from an interrupted run
                continue
            if rec.get("key") == key:
                done[rec["job"]] = rec
    return done


def run_study(spec: StudySpec, out_dir=None, progress: bool = False) -> StudyReport:
    """Run (or resume) every replicate of ``spec`` and aggregate.

    With ``out_dir`` the per-replicate records, the metrics table, the
    estimate histograms and a JSON summary are written there.
    """
    key = spec.key()
    out = Path(out_dir) if out_dir is not None else None
    done = {}
    rec_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        rec_path = out / "records.jsonl"
        done = _load_records(rec_path, key)
    pending = [j for j in range(spec.n_jobs) if j not in done]
    if pending:
        log.info("study %s: %d of %d jobs to run", spec.scenario, len(pending), spec.n_jobs)

    def store(rec):
        rec["key"] = key
        done[rec["job"]] = rec
        if rec_path is not None:
            with rec_path.open("a") as fh:
                fh.write(json.dumps(rec, default=_json_default) + "\n")
        if progress:
            log.info("job %d/%d %s (%.1fs)", len(done), spec.n_jobs, rec["status"],
                     rec.get("seconds", 0.0))

    if spec.workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            for rec in pool.map(_safe_replicate, [(spec, j) for j in pending]):
                store(rec)
    else:
        for j in pending:
            store(_safe_replicate((spec, j)))

    records = [done[j] for j in range(spec.n_jobs)]
    report = aggregate(spec, key, records)
    if out is not None:
        write_report(report, out)
    fail_rate = report.n_failed / max(1, len(records))
    if fail_rate > MAX_FAILURE_RATE:
        raise StudyError(f"{report.n_failed} of {len(records)} replicates failed "
                         f"(more than {MAX_FAILURE_RATE:.0%})")
    return report


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _metric_values(rec: dict) -> dict:
    """Estimates on the reporting scale (random-effect SDs instead of variances)."""
    est = dict(rec["full"]["estimates"])
    for k in ("sigma1", "sigma2"):
        est[k] = math.sqrt(max(est.pop(k + "_sq"), 0.0))
    return est


def _truth_values(rec: dict) -> dict:
    tr = dict(rec["truth"])
    for k in ("sigma1", "sigma2"):
        tr[k] = math.sqrt(tr.pop(k + "_sq"))
    return tr


def _reported_se(rec: dict, name: str) -> float:
    """SE on the reporting scale; SD SEs by the delta method from variance SEs."""
    se = rec["full"]["se"]
    if name in ("sigma1", "sigma2"):
        var = rec["full"]["estimates"][name + "_sq"]
        return se[name + "_sq"] / (2.0 * math.sqrt(var)) if var > 0 else float("nan")
    return se[name]


def aggregate(spec: StudySpec, key: str, records: list, bins: int = 20) -> StudyReport:
    ok = [r for r in records if r.get("status") == "ok"]
    report = StudyReport(spec, key, records, n_ok=len(ok), n_failed=len(records) - len(ok))
    if not ok:
        return report

    if spec.scenario != "power_grid":
        values = [_metric_values(r) for r in ok]
        truth = _truth_values(ok[0])
        for name in values[0]:
            est = np.array([v[name] for v in values])
            row = metrics(est, truth[name], name)
            ses = [_reported_se(r, name) for r in ok if r["full"]["se"] is not None]
            if ses:
                row = replace(row, median_se=float(np.median(ses)))
            report.metrics.append(row)
            counts, edges = np.histogram(est, bins=bins)
            width = np.diff(edges)
            dens = counts / (counts.sum() * width) if counts.sum() else counts * 0.0
            for c, lo, hi, d in zip(counts, edges[:-1], edges[1:], dens):
                report.histograms.append(dict(parameter=name, bin_left=float(lo),
                                              bin_right=float(hi), count=int(c),
                                              density=float(d)))

    test_names = sorted({t for r in ok for t in r["tests"]})
    for t in test_names:
        pv = [r["tests"][t]["p_value"] for r in ok if r["tests"].get(t) is not None]
        n = len(pv)
        rej = int(np.sum(np.asarray(pv) < spec.level)) if n else 0
        report.rejection[t] = dict(rate=rej / n if n else float("nan"), rejected=rej, n=n,
                                   unavailable=len(ok) - n)
    if spec.scenario == "power_grid":
        for g in spec.grid:
            pv = [r["tests"]["lrt"]["p_value"] for r in ok if r["grid_value"] == g]
            rate = float(np.mean(np.asarray(pv) < spec.level)) if pv else float("nan")
            report.power.append((float(g), rate, len(pv)))
    return report


def write_report(report: StudyReport, out: Path):
    import csv

    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(MetricsRow)])
        for r in report.metrics:
            w.writerow([getattr(r, f.name) for f in fields(MetricsRow)])
    with (out / "histograms.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["parameter", "bin_left", "bin_right", "count", "density"])
        w.writeheader()
        w.writerows(report.histograms)
    if report.power:
        with (out / "power.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid_value", "rejection_rate", "n"])
            w.writerows(report.power)
    from . import __version__
    summary = dict(version=__version__, key=report.key, spec=asdict(report.spec), n_ok=report.n_ok,
                   n_failed=report.n_failed, rejection=report.rejection,
                   power=report.power, metrics=[asdict(r) for r in report.metrics])
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default))


def power_curve(spec: StudySpec, out_dir=None) -> list:
    """``[(grid value, rejection rate, n), ...]`` of the LRT over ``spec.grid``."""
    if spec.scenario != "power_grid":
        spec = replace(spec, scenario="power_grid")
    return run_study(spec, out_dir).power

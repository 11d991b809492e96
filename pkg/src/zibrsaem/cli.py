"""Command-line interface: ``zibrsaem {fit,simulate,lrt,wald,bench}``.

Settings come from flags and, optionally, ``--config FILE`` holding
``key = value`` lines or a JSON object (a run manifest works as-is); flags
override the file.  Every CSV artifact carries ``seed`` and ``config_hash``
columns, and ``manifest.json`` echoes the resolved configuration, so
``--config <out>/manifest.json`` replays a run exactly.

Exit status: 0 on success, 2 for invalid configuration, 3 for invalid
input data, 4 when estimation fails, 1 otherwise.  Failures print a JSON
error record to stderr and write it to ``<out>/error.json`` when possible.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import SCENARIOS, StudyError, StudySpec, run_study
from .csvio import InputError, emit_csv, ingest_csv
from .inference import bh_adjust, lrt, wald
from .loglik import IsConfig, loglik_is
from .model import DimensionError, DomainError, ZibrError
from .saem import FitError, StepSchedule, fit
from .simulate import SimConfig, generate, interpolate, mcar_dropout

COMMANDS = ("fit", "simulate", "lrt", "wald", "bench")

# resolved settings and their defaults; None means "not set"
DEFAULTS = dict(input=None, out=None, k1=750, k2=250, chains=None, is_samples=500, is_df=5,
                seed=None, x_cols=None, z_cols=None, reduced=None, scenario="setting2",
                replicates=None, dropout=None, interpolate=False, individuals=None, times=10,
                workers=1)
INT_KEYS = ("k1", "k2", "chains", "is_samples", "is_df", "seed", "replicates", "individuals",
            "times", "workers")
LIST_KEYS = ("x_cols", "z_cols")


class ConfigError(ZibrError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def _parse_list(v):
    if v is None or isinstance(v, list):
        return v
    v = str(v).strip()
    return [c.strip() for c in v.split(",") if c.strip()] if v else []


def _parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def read_config_file(path) -> dict:
    """Settings from a JSON object (or a manifest's ``config``) or ``key = value`` lines."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return dict(data.get("config", data))
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve(command: str, file_cfg: dict, flags: dict) -> dict:
    """Merge defaults, file settings and flags, then type-check."""
    cfg = dict(DEFAULTS)
    unknown = set(file_cfg) - set(DEFAULTS) - {"command"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg.update({k: v for k, v in file_cfg.items() if k != "command"})
    cfg.update({k: v for k, v in flags.items() if v is not None})
    try:
        for k in INT_KEYS:
            if cfg[k] is not None:
                cfg[k] = int(cfg[k])
        if cfg["dropout"] is not None:
            cfg["dropout"] = float(cfg["dropout"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric setting: {exc}") from None
    for k in LIST_KEYS:
        cfg[k] = _parse_list(cfg[k])
    cfg["interpolate"] = _parse_bool(cfg["interpolate"])
    cfg["command"] = command

    if cfg["seed"] is None:
        raise ConfigError("a seed is required (--seed or seed in the config file)")
    if cfg["out"] is None:
        raise ConfigError("an output directory is required (--out)")
    if cfg["k1"] < 1 or cfg["k2"] < 1:
        raise ConfigError("need k1 >= 1 and k2 >= 1")
    counts = (cfg["chains"] or 1, cfg["is_samples"], cfg["is_df"], cfg["workers"])
    if min(counts) < 1:
        raise ConfigError("chains, is_samples, is_df and workers must be >= 1")
    if cfg["dropout"] is not None and not 0 <= cfg["dropout"] < 1:
        raise ConfigError("dropout must lie in [0, 1)")
    if cfg["scenario"] not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg['scenario']!r}; choose from {SCENARIOS}")
    if command in ("fit", "lrt", "wald") and not cfg["input"]:
        raise ConfigError(f"{command} needs an input file")
    if command == "lrt" and cfg["reduced"] is None:
        raise ConfigError("lrt needs --reduced")
    if command == "bench" and (cfg["replicates"] is None or cfg["replicates"] < 1):
        raise ConfigError("bench needs --replicates >= 1")
    return cfg


def config_hash(cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]


def parse_reduced(text: str, x_all, z_all):
    """``"x=c1,c2;z=c3"`` lists the covariates kept in the reduced model.

    A part left out keeps all its columns; ``x=`` (empty) drops them all.
    """
    x_cols, z_cols = list(x_all), list(z_all)
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "=" not in part:
            raise ConfigError(f"bad reduced-model term {part!r}; use x=...;z=...")
        k, v = (s.strip() for s in part.split("=", 1))
        cols = _parse_list(v)
        if k == "x":
            bad, x_cols = set(cols) - set(x_all), cols
        elif k == "z":
            bad, z_cols = set(cols) - set(z_all), cols
        else:
            raise ConfigError(f"bad reduced-model part {k!r}; use x or z")
        if bad:
            raise ConfigError(f"reduced model uses columns absent from the full model: "
                              f"{sorted(bad)}")
    return x_cols, z_cols


# --------------------------------------------------------------------------
# artifacts
# --------------------------------------------------------------------------

class Artifacts:
    def __init__(self, cfg: dict):
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.written = []
        (self.out / "error.json").unlink(missing_ok=True)

    def table(self, name: str, header, rows):
        path = self.out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(header) + ["seed", "config_hash"])
            for row in rows:
                w.writerow([_cell(v) for v in row] + [self.cfg["seed"], self.hash])
        self.written.append(name)

    def manifest(self, extra=None):
        files = {n: hashlib.sha256((self.out / n).read_bytes()).hexdigest()
                 for n in self.written}
        doc = dict(version=__version__, seed=self.cfg["seed"], config_hash=self.hash,
                   config=self.cfg, artifacts=files)
        doc.update(extra or {})
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _seeds(seed: int, n: int):
    return np.random.SeedSequence(seed).spawn(n)


def _fit(data, cfg, seed, compute_fim=True):
    return fit(data, schedule=StepSchedule(cfg["k1"], cfg["k2"]), m=cfg["chains"] or 5,
               seed=seed, compute_fim=compute_fim)


def _loglik(res, data, cfg, seed):
    return loglik_is(res.params, data, res.moments,
                     IsConfig(cfg["is_samples"], cfg["is_df"], seed))


def _load(cfg):
    return ingest_csv(cfg["input"], cfg["x_cols"], cfg["z_cols"])


def _estimate_rows(res):
    se = res.std_errors
    rows = []
    for k, (name, est) in enumerate(zip(res.names, res.params.to_vector())):
        s = None if se is None else float(se[k])
        p = wald(est, s).p_value if s is not None and s > 0 else None
        rows.append((name, float(est), s, p))
    return rows


def _write_fit(art: Artifacts, res, ll, prefix=""):
    art.table(f"{prefix}estimates.csv", ("parameter", "estimate", "se", "wald_p"),
              _estimate_rows(res))
    art.table(f"{prefix}loglik.csv", ("loglik", "mc_se", "k_samples", "nu"),
              [(ll.loglik, ll.mc_se, art.cfg["is_samples"], art.cfg["is_df"])])
    art.table(f"{prefix}trace.csv", ["iteration"] + list(res.names),
              [[q + 1] + row.tolist() for q, row in enumerate(res.trace)])


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_fit(cfg):
    data = _load(cfg)
    s_fit, s_is = _seeds(cfg["seed"], 2)
    res = _fit(data, cfg, s_fit)
    ll = _loglik(res, data, cfg, s_is)
    art = Artifacts(cfg)
    _write_fit(art, res, ll)
    art.manifest(dict(diagnostics=_jsonable(res.diagnostics)))
    return art


def cmd_wald(cfg):
    data = _load(cfg)
    s_fit, s_is = _seeds(cfg["seed"], 2)
    res = _fit(data, cfg, s_fit)
    ll = _loglik(res, data, cfg, s_is)
    if res.std_errors is None:
        raise FitError("information matrix not positive definite; no Wald tests available")
    art = Artifacts(cfg)
    _write_fit(art, res, ll)
    slopes = [k for k, n in enumerate(res.names) if n.startswith(("alpha_", "beta_"))]
    rows = []
    tests = {k: wald(res.params.to_vector()[k], res.std_errors[k]) for k in slopes}
    adj = bh_adjust([t.p_value for t in tests.values()])
    for (k, t), q in zip(tests.items(), adj):
        rows.append((res.names[k], float(res.params.to_vector()[k]), float(res.std_errors[k]),
                     t.statistic, t.p_value, float(q)))
    art.table("wald.csv", ("parameter", "estimate", "se", "statistic", "p_value", "p_bh"), rows)
    art.manifest(dict(diagnostics=_jsonable(res.diagnostics)))
    return art


def cmd_lrt(cfg):
    full_data = _load(cfg)
    x_red, z_red = parse_reduced(cfg["reduced"], full_data.x_names, full_data.z_names)
    s_full, s_red, s_is_full, s_is_red = _seeds(cfg["seed"], 4)
    full = _fit(full_data, cfg, s_full)
    ll_full = _loglik(full, full_data, cfg, s_is_full)
    same = (list(x_red) == list(full_data.x_names) and list(z_red) == list(full_data.z_names))
    if same:
        # identical models: reuse the fit so the statistic is exactly 0
        red_data, red, ll_red = full_data, full, ll_full
    else:
        red_data = full_data.select_covariates(x_red, z_red)
        red = _fit(red_data, cfg, s_red, compute_fim=False)
        ll_red = _loglik(red, red_data, cfg, s_is_red)
    df = (full_data.p - red_data.p) + (full_data.r - red_data.r)
    art = Artifacts(cfg)
    _write_fit(art, full, ll_full, prefix="full_")
    _write_fit(art, red, ll_red, prefix="reduced_")
    if df == 0:
        stat, raw, pval, warning = 0.0, 2.0 * (ll_full.loglik - ll_red.loglik), 1.0, None
    else:
        t = lrt(ll_full, ll_red, df)
        stat, raw, pval, warning = t.statistic, t.raw_statistic, t.p_value, t.warning
    art.table("lrt.csv", ("statistic", "raw_statistic", "df", "p_value", "warning"),
              [(stat, raw, df, pval, warning)])
    art.manifest()
    return art


def cmd_simulate(cfg):
    spec = _study_spec(cfg, replicates=1)
    truth = spec.true_params(0.0 if spec.scenario == "power_grid" else None)
    s_data, s_drop = _seeds(cfg["seed"], 2)
    data = generate(SimConfig(truth, spec.N, spec.t_per_individual, s_data))
    if spec.dropout_fraction > 0:
        data = mcar_dropout(data, spec.dropout_fraction, s_drop)
        if spec.interpolate:
            data = interpolate(data, spec.t_per_individual)
    art = Artifacts(cfg)
    emit_csv(data, art.out / "data.csv")
    art.written.append("data.csv")
    art.table("truth.csv", ("parameter", "value"),
              list(truth.as_dict(data.x_names, data.z_names).items()))
    art.manifest()
    return art


def _study_spec(cfg, replicates):
    return StudySpec(cfg["scenario"], replicates, n_individuals=cfg["individuals"],
                     t_per_individual=cfg["times"], k1=cfg["k1"], k2=cfg["k2"],
                     chains=cfg["chains"],
                     is_samples=cfg["is_samples"], is_df=cfg["is_df"], dropout=cfg["dropout"],
                     interpolate=cfg["interpolate"], workers=cfg["workers"], seed=cfg["seed"])


def cmd_bench(cfg):
    spec = _study_spec(cfg, cfg["replicates"])
    art = Artifacts(cfg)
    report = run_study(spec, art.out)
    art.written += [n for n in ("records.jsonl", "metrics.csv", "histograms.csv", "power.csv",
                                "summary.json") if (art.out / n).exists()]
    for row in report.metrics:
        print(f"{row.parameter}\tbias={row.bias:.4f}\tmae={row.mae:.4f}\trmse={row.rmse:.4f}")
    for name, r in report.rejection.items():
        print(f"{name}\trejection={r['rate']:.3f}\tn={r['n']}")
    art.manifest(dict(study_key=report.key, n_ok=report.n_ok, n_failed=report.n_failed))
    return art


def _jsonable(d):
    return json.loads(json.dumps(d, default=lambda o: o.item() if hasattr(o, "item") else str(o)))


HANDLERS = dict(fit=cmd_fit, simulate=cmd_simulate, lrt=cmd_lrt, wald=cmd_wald, bench=cmd_bench)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zibrsaem", description="Zero-inflated Beta random-effects regression fitted by SAEM.",
        epilog="Exit status: 0 ok, 2 bad configuration, 3 bad input data, "
               "4 estimation failed, 1 other.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name in ("fit", "lrt", "wald"):
            p.add_argument("input", nargs="?", help="long-format CSV file")
        p.add_argument("--config", help="key = value or JSON settings file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--k1", type=int)
        p.add_argument("--k2", type=int)
        p.add_argument("--chains", type=int)
        p.add_argument("--is-samples", type=int)
        p.add_argument("--is-df", type=int)
        if name in ("fit", "lrt", "wald"):
            p.add_argument("--x-cols", help="comma-separated presence-part covariates")
            p.add_argument("--z-cols", help="comma-separated abundance-part covariates")
        if name == "lrt":
            p.add_argument("--reduced", help='covariates kept under H0, e.g. "x=;z=age"')
        if name in ("simulate", "bench"):
            p.add_argument("--scenario", choices=SCENARIOS)
            p.add_argument("--dropout", type=float)
            p.add_argument("--interpolate", action="store_true", default=None)
            p.add_argument("--individuals", type=int)
            p.add_argument("--times", type=int)
        if name == "bench":
            p.add_argument("--replicates", type=int)
            p.add_argument("--workers", type=int)
    return parser


EXIT_CODES = ((ConfigError, 2), (InputError, 3), (DomainError, 3), (DimensionError, 3),
              (FitError, 4), (StudyError, 4), (np.linalg.LinAlgError, 4), (ZibrError, 1))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    out = flags.get("out")
    try:
        file_cfg = read_config_file(args.config) if args.config else {}
        cfg = resolve(args.command, file_cfg, flags)
        out = cfg["out"]
        HANDLERS[args.command](cfg)
    except (ZibrError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        code = next((c for t, c in EXIT_CODES if isinstance(exc, t)), 1)
        record = dict(error=type(exc).__name__, message=str(exc), exit_code=code,
                      command=args.command, line=getattr(exc, "line", None))
        print(json.dumps(record), file=sys.stderr)
        if out:
            try:
                Path(out).mkdir(parents=True, exist_ok=True)
                (Path(out) / "error.json").write_text(json.dumps(record, indent=2) + "\n")
            except OSError:
                pass
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())

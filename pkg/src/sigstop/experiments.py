"""Experiment orchestration: price tables, parameter studies, CSV emission.

Every runner resolves an ExperimentConfig, repeats training over independent
seed pairs, and appends rows to a CSV whose bytes depend only on the config
and seeds.  Wall-clock timings go to a separate ``*_timings.csv`` sidecar so
the result files stay byte-reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cache import get_or_simulate
from .errors import ConfigError
from .features import FeatureSpec
from .models import (CashflowMatrix, ModelParams, PathBatch, bergomi_params,
                     black_scholes_params, cashflows, heston_params)
from .pricing import (DualBound, PriceReport, PrimalConfig, StoppingPolicy,
                      duality_report, feature_importance, fit_dual, fit_primal,
                      lower_bound, upper_bound)
from .regression import DualConfig

__all__ = [
    "ExperimentConfig",
    "price_contract",
    "run_price_table",
    "run_ridge_sweep",
    "run_sample_size_study",
    "run_correlation_study",
    "run_discretization_study",
    "run_feature_importance",
]

_FLOAT_FMT = "%.10g"


@dataclass
class ExperimentConfig:
    """Resolved configuration of one experiment run (desk-scale defaults)."""

    model: str = "rough_bergomi"
    H: float | None = None
    rho: float | None = None
    eta: float | None = None
    xi0: float | None = None
    nu: float | None = None
    lambda_mr: float | None = None
    theta: float | None = None
    v0: float | None = None
    sigma: float | None = None
    r: float | None = None
    s0: float = 100.0
    T: float = 1.0

    strikes: tuple = (70.0, 80.0, 90.0, 100.0, 110.0, 120.0)
    n_exercise: int = 12
    n_fine: int = 120
    level: int = 4
    backends: tuple = ("linear", "deep", "kernel")
    m_train: int = 2**13
    m_test: int = 2**13
    seed: int = 2024
    repeats: int = 5
    antithetic: bool = False

    # feature / backend knobs
    laguerre: int = 3
    ridge: float = 1e-3
    n_landmarks: int = 32
    n_kernel: int = 60
    resample_per_date: bool = False
    driver: str = "price"
    itm_only: bool = False

    # training knobs
    primal_epochs_last: int = 15
    primal_epochs_warm: int = 3
    primal_hidden_layers: int = 2
    dual_epochs: int = 6
    dual_hidden_layers: int = 6
    dual_iterations: int = 800
    dual_lr: float = 0.02
    smooth_tau: float = 0.02
    anneal_epochs: int = 2

    # io
    out_dir: str = "results"
    cache_dir: str | None = None
    use_cache: bool = True
    force_sim: bool = False

    # ------------------------------------------------------------------
    @staticmethod
    def from_file(path: str | Path, overrides: dict | None = None) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text())
        return ExperimentConfig.from_dict(data, overrides)

    @staticmethod
    def from_dict(data: dict, overrides: dict | None = None) -> "ExperimentConfig":
        merged = dict(data)
        merged.update(overrides or {})
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        unknown = set(merged) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("strikes", "backends"):
            if key in merged and isinstance(merged[key], list):
                merged[key] = tuple(merged[key])
        try:
            return ExperimentConfig(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def canonical(self) -> dict:
        out = asdict(self)
        out["strikes"] = list(self.strikes)
        out["backends"] = list(self.backends)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    # ------------------------------------------------------------------
    def model_params(self, **extra) -> ModelParams:
        base = {"rough_bergomi": bergomi_params,
                "rough_heston": heston_params,
                "black_scholes": black_scholes_params}
        if self.model not in base:
            raise ConfigError(f"unknown model {self.model!r}")
        kw = {"s0": self.s0, "T": self.T}
        for name in ("H", "rho", "eta", "xi0", "nu", "lambda_mr", "theta",
                     "v0", "sigma", "r"):
            val = getattr(self, name)
            if val is not None:
                kw[name] = val
        kw.update(extra)
        return base[self.model](**kw)

    def feature_spec(self, backend: str) -> FeatureSpec:
        return FeatureSpec(
            backend=backend, level=self.level, laguerre=self.laguerre,
            n_kernel=self.n_kernel, n_landmarks=self.n_landmarks,
            ridge=self.ridge, resample_per_date=self.resample_per_date,
            driver=self.driver, itm_only=self.itm_only,
        )

    def primal_config(self) -> PrimalConfig:
        return PrimalConfig(epochs_last=self.primal_epochs_last,
                            epochs_warm=self.primal_epochs_warm,
                            hidden_layers=self.primal_hidden_layers,
                            seed=self.seed)

    def dual_config(self) -> DualConfig:
        return DualConfig(lr=self.dual_lr, iterations=self.dual_iterations,
                          smooth_tau=self.smooth_tau,
                          anneal_steps=self.anneal_epochs,
                          hidden=(0,) * self.dual_hidden_layers,
                          epochs=self.dual_epochs, seed=self.seed)

    def batches(self, repeat: int, *, params: ModelParams | None = None,
                n_fine: int | None = None,
                m_train: int | None = None) -> tuple[PathBatch, PathBatch]:
        params = params or self.model_params()
        n_fine = n_fine or self.n_fine
        seed_tr = self.seed + 1000 * repeat
        seed_te = self.seed + 1000 * repeat + 500
        train = get_or_simulate(params, n_fine, m_train or self.m_train, seed_tr,
                                n_exercise=self.n_exercise, antithetic=self.antithetic,
                                root=self.cache_dir, force=self.force_sim,
                                use_cache=self.use_cache)
        test = get_or_simulate(params, n_fine, self.m_test, seed_te,
                               n_exercise=self.n_exercise, antithetic=self.antithetic,
                               root=self.cache_dir, force=self.force_sim,
                               use_cache=self.use_cache)
        return train, test


# ---------------------------------------------------------------------------
# single-contract pricing
# ---------------------------------------------------------------------------

def price_contract(cfg: ExperimentConfig, backend: str, strike: float,
                   *, params: ModelParams | None = None,
                   n_fine: int | None = None, m_train: int | None = None,
                   repeats: int | None = None) -> tuple[PriceReport, dict]:
    """Aggregate bounds for one (model, strike, backend) cell over repeats."""
    repeats = repeats or cfg.repeats
    spec = cfg.feature_spec(backend)
    points, lowers, lses, uppers, uses, euros = [], [], [], [], [], []
    timings = {"simulate": 0.0, "primal_train": 0.0, "dual_train": 0.0, "evaluate": 0.0}
    for rep in range(repeats):
        t0 = time.perf_counter()
        train, test = cfg.batches(rep, params=params, n_fine=n_fine, m_train=m_train)
        timings["simulate"] += time.perf_counter() - t0
        Ztr = cashflows(train, strike)
        Zte = cashflows(test, strike)
        euros.append(float(Zte.Z[:, -1].mean()))

        t0 = time.perf_counter()
        policy, point, _ = fit_primal(train, Ztr, spec, cfg.primal_config())
        timings["primal_train"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        dual, _ = fit_dual(train, Ztr, spec, cfg.dual_config())
        timings["dual_train"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        lb, lse = lower_bound(policy, test, Zte)
        ub, use = upper_bound(dual, test, Zte)
        timings["evaluate"] += time.perf_counter() - t0
        points.append(point)
        lowers.append(lb)
        lses.append(lse)
        uppers.append(ub)
        uses.append(use)
    lower, lower_se = _aggregate(lowers, lses)
    upper, upper_se = _aggregate(uppers, uses)
    report = duality_report(float(np.mean(points)), lower, lower_se, upper, upper_se,
                            config=cfg.canonical(),
                            seeds={"base": cfg.seed, "repeats": repeats},
                            timings=timings)
    extras = {"european": float(np.mean(euros)), "timings": timings}
    return report, extras


def _aggregate(values: list[float], ses: list[float]) -> tuple[float, float]:
    """Mean across repeated trainings; se combines MC error and training spread."""
    values = np.asarray(values, dtype=float)
    ses = np.asarray(ses, dtype=float)
    mean = float(values.mean())
    mc = float(np.sqrt((ses**2).mean() / len(values)))
    between = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return mean, max(mc, between)


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return _FLOAT_FMT % x
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _write_timings(path: Path, rows: list[list]) -> None:
    _write_csv(path, ["experiment", "phase", "seconds"], rows)


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------

def run_price_table(cfg: ExperimentConfig, out: str | Path | None = None) -> Path:
    """Strike x backend table with European anchor, bounds and relative gap."""
    out = Path(out or Path(cfg.out_dir) / "price_table.csv")
    chash, ver = cfg.config_hash(), f"sigstop-{__version__}"
    header = ["model", "H", "strike", "backend", "m_train", "m_test", "n_fine",
              "level", "seed", "repeats", "european", "point_estimate",
              "lower", "lower_se", "upper", "upper_se", "rel_gap",
              "config_hash", "version"]
    rows, timing_rows = [], []
    params = cfg.model_params()
    for strike in cfg.strikes:
        for backend in cfg.backends:
            report, extras = price_contract(cfg, backend, float(strike))
            rows.append([cfg.model, params.H, float(strike), backend,
                         cfg.m_train, cfg.m_test, cfg.n_fine, cfg.level,
                         cfg.seed, cfg.repeats, extras["european"],
                         report.point_estimate, report.lower_bound,
                         report.lower_se, report.upper_bound, report.upper_se,
                         report.relative_gap, chash, ver])
            for phase, sec in extras["timings"].items():
                timing_rows.append([f"price:{strike}:{backend}", phase, f"{sec:.3f}"])
    _write_csv(out, header, rows)
    _write_timings(out.with_name(out.stem + "_timings.csv"), timing_rows)
    return out


def run_ridge_sweep(cfg: ExperimentConfig, lambdas: list[float],
                    out: str | Path | None = None) -> Path:
    """Kernel-backend sweep over the ridge parameter at the first strike."""
    out = Path(out or Path(cfg.out_dir) / "ridge_sweep.csv")
    strike = float(cfg.strikes[0])
    rows, timing_rows = [], []
    results = []
    for lam in lambdas:
        sweep_cfg = replace(cfg, ridge=float(lam), backends=("kernel",))
        t0 = time.perf_counter()
        report, extras = price_contract(sweep_cfg, "kernel", strike)
        timing_rows.append([f"ridge:{lam}", "total", f"{time.perf_counter() - t0:.3f}"])
        results.append((float(lam), report.point_estimate, report.lower_bound,
                        report.lower_se))
    best = max(range(len(results)), key=lambda i: results[i][2])
    for i, (lam, point, lb, lse) in enumerate(results):
        rows.append([cfg.model, strike, lam, point, lb, lse,
                     int(i == best), cfg.config_hash(), f"sigstop-{__version__}"])
    _write_csv(out, ["model", "strike", "ridge_lambda", "point_estimate",
                     "lower", "lower_se", "best_lower", "config_hash", "version"], rows)
    _write_timings(out.with_name(out.stem + "_timings.csv"), timing_rows)
    return out


def run_sample_size_study(cfg: ExperimentConfig, m_grid: list[int],
                          out: str | Path | None = None) -> Path:
    """Bounds vs training sample size at the first strike."""
    out = Path(out or Path(cfg.out_dir) / "sample_study.csv")
    strike = float(cfg.strikes[0])
    rows, timing_rows = [], []
    for backend in cfg.backends:
        for m in m_grid:
            t0 = time.perf_counter()
            report, extras = price_contract(cfg, backend, strike, m_train=int(m))
            timing_rows.append([f"sample:{backend}:{m}", "total",
                                f"{time.perf_counter() - t0:.3f}"])
            rows.append([cfg.model, strike, backend, int(m), cfg.m_test,
                         report.point_estimate, report.lower_bound, report.lower_se,
                         report.upper_bound, report.upper_se,
                         cfg.config_hash(), f"sigstop-{__version__}"])
    _write_csv(out, ["model", "strike", "backend", "m_train", "m_test",
                     "point_estimate", "lower", "lower_se", "upper", "upper_se",
                     "config_hash", "version"], rows)
    _write_timings(out.with_name(out.stem + "_timings.csv"), timing_rows)
    return out


def run_correlation_study(cfg: ExperimentConfig, rho_grid: list[float],
                          out: str | Path | None = None) -> Path:
    """Bounds vs spot-vol correlation at the first strike."""
    out = Path(out or Path(cfg.out_dir) / "correlation_study.csv")
    strike = float(cfg.strikes[0])
    rows, timing_rows = [], []
    for backend in cfg.backends:
        for rho in rho_grid:
            params = cfg.model_params(rho=float(rho))
            t0 = time.perf_counter()
            report, extras = price_contract(cfg, backend, strike, params=params)
            timing_rows.append([f"corr:{backend}:{rho}", "total",
                                f"{time.perf_counter() - t0:.3f}"])
            rows.append([cfg.model, strike, backend, float(rho),
                         report.point_estimate, report.lower_bound, report.lower_se,
                         report.upper_bound, report.upper_se, report.relative_gap,
                         cfg.config_hash(), f"sigstop-{__version__}"])
    _write_csv(out, ["model", "strike", "backend", "rho", "point_estimate",
                     "lower", "lower_se", "upper", "upper_se", "rel_gap",
                     "config_hash", "version"], rows)
    _write_timings(out.with_name(out.stem + "_timings.csv"), timing_rows)
    return out


def run_discretization_study(cfg: ExperimentConfig, n_grid: list[int],
                             h_grid: list[float],
                             out: str | Path | None = None) -> Path:
    """Relative duality gap eps(N, H) plus a fitted log-log slope per H."""
    out = Path(out or Path(cfg.out_dir) / "discretization_study.csv")
    strike = float(cfg.strikes[0])
    backend = cfg.backends[0]
    rows, timing_rows = [], []
    for h in h_grid:
        gaps = []
        for n_fine in n_grid:
            params = cfg.model_params(H=float(h))
            t0 = time.perf_counter()
            report, extras = price_contract(cfg, backend, strike, params=params,
                                            n_fine=int(n_fine))
            timing_rows.append([f"disc:H={h}:N={n_fine}", "total",
                                f"{time.perf_counter() - t0:.3f}"])
            gaps.append(max(report.relative_gap, 1e-12))
            rows.append([cfg.model, strike, backend, float(h), int(n_fine),
                         report.lower_bound, report.lower_se,
                         report.upper_bound, report.upper_se, report.relative_gap,
                         "", cfg.config_hash(), f"sigstop-{__version__}"])
        slope = float(np.polyfit(np.log(np.asarray(n_grid, dtype=float)),
                                 np.log(np.asarray(gaps)), 1)[0])
        for i in range(len(n_grid)):
            rows[-len(n_grid) + i][10] = slope
    _write_csv(out, ["model", "strike", "backend", "H", "n_fine",
                     "lower", "lower_se", "upper", "upper_se", "rel_gap",
                     "loglog_slope", "config_hash", "version"], rows)
    _write_timings(out.with_name(out.stem + "_timings.csv"), timing_rows)
    return out


def run_feature_importance(cfg: ExperimentConfig, *, repeats: int = 20,
                           max_word_len: int = 3,
                           out: str | Path | None = None) -> Path:
    """Permutation importance of deep-backend features, primal and dual."""
    out = Path(out or Path(cfg.out_dir) / "feature_importance.csv")
    strike = float(cfg.strikes[0])
    spec = cfg.feature_spec("deep")
    train, test = cfg.batches(0)
    Ztr = cashflows(train, strike)
    policy, _point, _ = fit_primal(train, Ztr, spec, cfg.primal_config())
    dual, _ = fit_dual(train, Ztr, spec, cfg.dual_config())
    sel = [n for n in _importance_names(spec) if len(n.replace("X", "")) <= max_word_len]
    t0 = time.perf_counter()
    primal_scores = feature_importance(policy, train, Ztr, repeats=repeats,
                                       seed=cfg.seed, features=sel)
    dual_scores = feature_importance(dual, train, Ztr, repeats=repeats,
                                     seed=cfg.seed, features=sel)
    rows = []
    rank_p = sorted(primal_scores, key=primal_scores.get, reverse=True)
    rank_d = sorted(dual_scores, key=dual_scores.get, reverse=True)
    for name in sel:
        rows.append([cfg.model, strike, name, primal_scores[name],
                     rank_p.index(name) + 1, dual_scores[name],
                     rank_d.index(name) + 1, cfg.config_hash(),
                     f"sigstop-{__version__}"])
    _write_csv(out, ["model", "strike", "feature", "primal_score", "primal_rank",
                     "dual_score", "dual_rank", "config_hash", "version"], rows)
    _write_timings(out.with_name(out.stem + "_timings.csv"),
                   [["importance", "total", f"{time.perf_counter() - t0:.3f}"]])
    return out


def _importance_names(spec: FeatureSpec) -> list[str]:
    from .signatures import all_words
    words = all_words(2, spec.level)[1:]
    return ["X"] + ["".join(map(str, w)) for w in words]

"""Primal Longstaff-Schwartz and dual martingale bounds, generic over backends.

The primal recursion regresses the realized cash flow at the current stopping
time on date-n features, then tightens the stopping rule with the >= rule
(stop on ties).  Bounds are always evaluated on a fresh batch: the engine
refuses to reuse the training seed.  The dual value of any trained model is an
upper bound in expectation because the rebuilt martingales are true
martingales once the coefficients are frozen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .features import (FeatureSpec, PrimalFeatures, build_dual_basis,
                       build_dual_mlp_features, build_primal_features)
from .kernels import (GramBlock, KernelLift, cross_diagonals, gram_blocks,
                      kernel_lift, kernel_martingales, nystrom_sample_dual,
                      nystrom_sample_primal, self_diagonals)
from .models import CashflowMatrix, PathBatch, cashflows
from .regression import (DualConfig, LinearDualModel, Mlp, MlpConfig,
                         MlpDualModel, RidgeSolution, Standardizer,
                         dual_minimize_linear, dual_minimize_mlp, kernel_ridge,
                         linear_lsq, mlp_fit)

__all__ = [
    "StoppingPolicy",
    "DualBound",
    "PriceReport",
    "PrimalConfig",
    "fit_primal",
    "lower_bound",
    "fit_dual",
    "upper_bound",
    "duality_report",
    "feature_importance",
    "hidden_width",
]


def hidden_width(n_features: int) -> int:
    """Reference architecture: (input dim + 1) + 32 neurons per hidden layer."""
    return n_features + 1 + 32


@dataclass
class PrimalConfig:
    epochs_last: int = 15     # cold training at the last exercise date
    epochs_warm: int = 1      # warm-started earlier dates
    batch_size: int = 128
    lr: float = 1e-3
    hidden_layers: int = 2
    seed: int = 0


@dataclass
class _KernelPolicyState:
    scales: np.ndarray
    n_kernel: int
    landmark_paths: np.ndarray          # (U, P+1, 3) scaled union paths
    date_cols: list[np.ndarray]         # per date: columns into the union
    alphas: list[np.ndarray]


@dataclass
class StoppingPolicy:
    """Fitted continuation models per exercise date plus the stop-on-tie rule."""

    spec: FeatureSpec
    strike: float
    train_seed: int
    n_dates: int
    models: list = field(default_factory=list)           # per date 1..N-1
    standardizers: list = field(default_factory=list)
    target_stats: list = field(default_factory=list)      # (mu, sd) per date for MLPs
    feature_names: list[str] = field(default_factory=list)
    kernel_state: _KernelPolicyState | None = None

    def continuation(self, features: PrimalFeatures | None, n: int,
                     gram_rows: np.ndarray | None = None) -> np.ndarray:
        """Predicted continuation value at date n (1..N-1)."""
        model = self.models[n - 1]
        if model is None:
            return np.full(gram_rows.shape[0] if gram_rows is not None
                           else features.tensor.shape[0], np.inf)
        if self.spec.backend == "kernel":
            return gram_rows @ model
        phi = self.standardizers[n - 1].transform(features.at(n))
        if isinstance(model, Mlp):
            mu, sd = self.target_stats[n - 1]
            return mu + sd * model.forward(phi)
        return phi @ model


def _euro_policy_values(Z: np.ndarray) -> np.ndarray:
    return Z[:, -1].copy()


def fit_primal(batch: PathBatch, Z: CashflowMatrix, spec: FeatureSpec,
               config: PrimalConfig | None = None) -> tuple[StoppingPolicy, float, dict]:
    """Backward Longstaff-Schwartz recursion; returns (policy, point estimate, info)."""
    config = config or PrimalConfig()
    n_dates = len(batch.exercise_idx) - 1
    policy = StoppingPolicy(spec, Z.strike, batch.seed, n_dates)
    info: dict = {"timings": {}}
    t0 = time.perf_counter()

    value = _euro_policy_values(Z.Z)
    if n_dates == 1:
        point = max(float(Z.Z[0, 0]), float(value.mean()))
        info["timings"]["primal_train"] = time.perf_counter() - t0
        return policy, point, info

    if spec.backend == "kernel":
        lift = kernel_lift(batch, spec.n_kernel)
        diag = self_diagonals(lift)
        if spec.resample_per_date:
            landmarks = [nystrom_sample_primal(diag, lift.exercise_kidx, n,
                                               spec.n_landmarks, batch.seed)
                         for n in range(1, n_dates)]
        else:
            landmarks = [nystrom_sample_primal(diag, lift.exercise_kidx, n_dates - 1,
                                               spec.n_landmarks, batch.seed)] * (n_dates - 1)
        # date N-1..1 blocks; gram_blocks wants sets for every interior date
        blocks = gram_blocks(lift, landmarks + [landmarks[-1]])  # pad date N (unused)
        union = np.unique(np.concatenate([b.landmark_idx for b in blocks[:-1]]))
        col_of = {int(j): c for c, j in enumerate(union)}
        state = _KernelPolicyState(lift.scales, spec.n_kernel,
                                   lift.paths[union].copy(), [], [])
        m = batch.n_paths
        for n in range(n_dates - 1, 0, -1):
            blk = blocks[n - 1]
            sol = kernel_ridge(blk.K, blk.R, value, spec.ridge, m, blk.landmark_idx)
            pred = sol.fitted(blk.K)
            stop = _stop_rule(Z.Z[:, n], pred, spec.itm_only)
            value = np.where(stop, Z.Z[:, n], value)
            state.date_cols.append(np.array([col_of[int(j)] for j in blk.landmark_idx]))
            state.alphas.append(sol.alpha)
        state.date_cols.reverse()
        state.alphas.reverse()
        policy.kernel_state = state
        policy.models = [state.alphas[n - 1] for n in range(1, n_dates)]
    else:
        feats = build_primal_features(batch, Z, spec)
        policy.feature_names = feats.names
        policy.models = [None] * (n_dates - 1)
        policy.standardizers = [None] * (n_dates - 1)
        policy.target_stats = [(0.0, 1.0)] * (n_dates - 1)
        warm: Mlp | None = None
        for n in range(n_dates - 1, 0, -1):
            phi_raw = feats.at(n)
            scaler = Standardizer().fit(phi_raw)
            phi = scaler.transform(phi_raw)
            fit_rows = np.arange(batch.n_paths)
            if spec.itm_only:
                itm = Z.Z[:, n] > 0
                fit_rows = np.flatnonzero(itm) if itm.any() else fit_rows
            mu = float(value[fit_rows].mean())
            sd = float(value[fit_rows].std())
            if sd <= 1e-14:
                model = _constant_model(spec, phi.shape[1], mu)
                if spec.backend == "deep":
                    policy.target_stats[n - 1] = (0.0, 1.0)
            elif spec.backend == "deep":
                width = hidden_width(phi.shape[1])
                epochs = config.epochs_last if warm is None else config.epochs_warm
                mcfg = MlpConfig(hidden=(width,) * config.hidden_layers,
                                 activation="leaky_relu", epochs=epochs,
                                 batch_size=config.batch_size, lr=config.lr,
                                 seed=config.seed)
                model, _hist = mlp_fit(phi[fit_rows], (value[fit_rows] - mu) / sd,
                                       mcfg, warm_start=warm)
                warm = model
                policy.target_stats[n - 1] = (mu, sd)
            else:
                model = linear_lsq(phi[fit_rows], value[fit_rows])
            if isinstance(model, Mlp):
                tmu, tsd = policy.target_stats[n - 1]
                pred = tmu + tsd * model.forward(phi)
            else:
                pred = phi @ model
            stop = _stop_rule(Z.Z[:, n], pred, spec.itm_only)
            value = np.where(stop, Z.Z[:, n], value)
            policy.models[n - 1] = model
            policy.standardizers[n - 1] = scaler
    point = max(float(Z.Z[0, 0]), float(value.mean()))
    info["timings"]["primal_train"] = time.perf_counter() - t0
    return policy, point, info


def _constant_model(spec: FeatureSpec, n_features: int, c: float):
    if spec.backend == "deep":
        net = Mlp([n_features, 1, 1], "leaky_relu", seed=0)
        net.weights = [np.zeros((n_features, 1)), np.zeros((1, 1))]
        net.biases = [np.zeros(1), np.array([c])]
        return net
    coeff = np.zeros(n_features)
    coeff[0] = c  # intercept column
    return coeff


def _stop_rule(payoff: np.ndarray, continuation: np.ndarray, itm_only: bool) -> np.ndarray:
    stop = payoff >= continuation
    if itm_only:
        stop &= payoff > 0
    return stop


def _guard_fresh(train_seed: int, batch: PathBatch):
    if batch.seed == train_seed:
        raise ConfigError(
            "test batch shares the training seed; bounds require independent samples"
        )


def lower_bound(policy: StoppingPolicy, batch: PathBatch,
                Z: CashflowMatrix | None = None) -> tuple[float, float]:
    """Evaluate the stopping rule on a fresh batch: (lower bound, standard error)."""
    _guard_fresh(policy.train_seed, batch)
    Z = Z or cashflows(batch, policy.strike)
    n_dates = policy.n_dates
    m = batch.n_paths
    value = _euro_policy_values(Z.Z)
    if n_dates > 1 and policy.models:
        if policy.spec.backend == "kernel":
            state = policy.kernel_state
            lift = kernel_lift(batch, state.n_kernel, scales=state.scales)
            diag = cross_diagonals(lift.paths, state.landmark_paths)
            stopped = np.zeros(m, dtype=bool)
            for n in range(1, n_dates):
                K = diag[:, state.date_cols[n - 1], lift.exercise_kidx[n]]
                pred = K @ state.alphas[n - 1]
                newly = ~stopped & _stop_rule(Z.Z[:, n], pred, policy.spec.itm_only)
                value[newly] = Z.Z[newly, n]
                stopped |= newly
        else:
            feats = build_primal_features(batch, Z, policy.spec)
            stopped = np.zeros(m, dtype=bool)
            for n in range(1, n_dates):
                pred = policy.continuation(feats, n)
                newly = ~stopped & _stop_rule(Z.Z[:, n], pred, policy.spec.itm_only)
                value[newly] = Z.Z[newly, n]
                stopped |= newly
    lb = max(float(Z.Z[0, 0]), float(value.mean()))
    se = float(value.std(ddof=1) / np.sqrt(m))
    return lb, se


# ---------------------------------------------------------------------------
# dual side
# ---------------------------------------------------------------------------

@dataclass
class DualBound:
    """Trained dual model: martingale family plus optimized weights."""

    spec: FeatureSpec
    strike: float
    train_seed: int
    objective: float
    linear: LinearDualModel | None = None
    mlp: MlpDualModel | None = None
    payoff_scale: float = 1.0           # deep dual trains on Z / payoff_scale
    feat_scaler: Standardizer | None = None
    kernel_scales: np.ndarray | None = None
    kernel_landmarks: np.ndarray | None = None  # (L, P+1, 3) scaled paths

    def martingales(self, batch: PathBatch, Z: CashflowMatrix) -> np.ndarray:
        """Rebuild the combined martingale (M, N+1) on a batch."""
        spec = self.spec
        if spec.backend in ("linear", "state"):
            basis, _ = build_dual_basis(batch, Z, spec)
            return self.linear.combine(basis)
        if spec.backend == "deep":
            feats, dz, _ = build_dual_mlp_features(batch, spec)
            m, p, f = feats.shape
            feats = self.feat_scaler.transform(feats.reshape(m * p, f)).reshape(m, p, f)
            return self.payoff_scale * self.mlp.martingale(feats, dz, batch.exercise_idx)
        if spec.backend == "kernel":
            lift = kernel_lift(batch, spec.n_kernel, scales=self.kernel_scales)
            diag = cross_diagonals(lift.paths, self.kernel_landmarks)
            mart = kernel_martingales(batch, lift,
                                      np.arange(len(self.kernel_landmarks)),
                                      driver=spec.driver, integrands=diag)
            return self.linear.combine(mart)
        raise ConfigError(f"unknown backend {spec.backend!r}")


def _basis_scales(basis: np.ndarray) -> np.ndarray:
    """Per-column normalizer: std of the terminal martingale value."""
    sd = basis[:, :, -1].std(axis=0)
    return np.where(sd > 1e-12, sd, 1.0)


def fit_dual(batch: PathBatch, Z: CashflowMatrix, spec: FeatureSpec,
             config: DualConfig | None = None) -> tuple[DualBound, dict]:
    """Train the dual martingale family on the batch; returns (model, info)."""
    config = config or DualConfig()
    info: dict = {"timings": {}}
    t0 = time.perf_counter()
    if spec.backend in ("linear", "state"):
        basis, names = build_dual_basis(batch, Z, spec)
        scale = _basis_scales(basis)
        model = dual_minimize_linear(basis / scale[None, :, None], Z.Z / Z.strike, config)
        model = LinearDualModel(Z.strike * model.beta / scale,
                                Z.strike * model.objective, model.history)
        bound = DualBound(spec, Z.strike, batch.seed, model.objective, linear=model)
        info["basis_names"] = names
    elif spec.backend == "deep":
        feats, dz, names = build_dual_mlp_features(batch, spec)
        m, p, f = feats.shape
        scaler = Standardizer().fit(feats.reshape(m * p, f))
        feats = scaler.transform(feats.reshape(m * p, f)).reshape(m, p, f)
        if any(h == 0 for h in config.hidden) or config.hidden == DualConfig().hidden:
            config = replace(config, hidden=(hidden_width(f),) * len(config.hidden))
        model = dual_minimize_mlp(feats, dz, Z.Z / Z.strike, batch.exercise_idx, config)
        model.objective *= Z.strike
        bound = DualBound(spec, Z.strike, batch.seed, model.objective, mlp=model,
                          payoff_scale=Z.strike, feat_scaler=scaler)
        info["basis_names"] = names
    elif spec.backend == "kernel":
        lift = kernel_lift(batch, spec.n_kernel)
        diag = self_diagonals(lift)
        landmarks = nystrom_sample_dual(diag, lift.times, spec.n_landmarks, batch.seed)
        integrands = cross_diagonals(lift.paths, lift.paths[landmarks])
        mart = kernel_martingales(batch, lift, landmarks, driver=spec.driver,
                                  integrands=integrands)
        gram = None
        if spec.ridge > 0:
            land = cross_diagonals(lift.paths[landmarks], lift.paths[landmarks])
            gram = 0.5 * (land[:, :, -1] + land[:, :, -1].T)
        kcfg = replace(config, ridge=spec.ridge) if config.ridge == 0 else config
        scale = _basis_scales(mart)
        if gram is not None:
            gram = gram / np.outer(scale, scale)
        model = dual_minimize_linear(mart / scale[None, :, None], Z.Z / Z.strike,
                                     kcfg, gram=gram)
        model = LinearDualModel(Z.strike * model.beta / scale,
                                Z.strike * model.objective, model.history)
        bound = DualBound(spec, Z.strike, batch.seed, model.objective, linear=model,
                          kernel_scales=lift.scales,
                          kernel_landmarks=lift.paths[landmarks].copy())
    else:
        raise ConfigError(f"unknown backend {spec.backend!r}")
    info["timings"]["dual_train"] = time.perf_counter() - t0
    info["objective"] = bound.objective
    return bound, info


def upper_bound(bound: DualBound, batch: PathBatch,
                Z: CashflowMatrix | None = None) -> tuple[float, float]:
    """Evaluate the trained dual on a fresh batch: (upper bound, standard error)."""
    _guard_fresh(bound.train_seed, batch)
    Z = Z or cashflows(batch, bound.strike)
    mart = bound.martingales(batch, Z)
    vals = np.max(Z.Z - mart, axis=1)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(batch.n_paths))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class PriceReport:
    point_estimate: float
    lower_bound: float
    lower_se: float
    upper_bound: float
    upper_se: float
    relative_gap: float
    sandwich_violation: bool
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def duality_report(point: float, lower: float, lower_se: float,
                   upper: float, upper_se: float, *, config: dict | None = None,
                   seeds: dict | None = None, timings: dict | None = None) -> PriceReport:
    """Assemble the report; flags a sandwich violation beyond 3 combined se."""
    gap = (upper - lower) / upper if upper != 0 else 0.0
    violation = lower > upper + 3.0 * (lower_se + upper_se)
    return PriceReport(point, lower, lower_se, upper, upper_se, gap, violation,
                       config or {}, seeds or {}, timings or {})


# ---------------------------------------------------------------------------
# permutation feature importance
# ---------------------------------------------------------------------------

def _primal_point_from_tensor(policy: StoppingPolicy, tensor: np.ndarray,
                              Z: np.ndarray) -> float:
    m = tensor.shape[0]
    value = Z[:, -1].copy()
    stopped = np.zeros(m, dtype=bool)
    for n in range(1, policy.n_dates):
        model = policy.models[n - 1]
        phi = policy.standardizers[n - 1].transform(tensor[:, n - 1])
        if isinstance(model, Mlp):
            mu, sd = policy.target_stats[n - 1]
            pred = mu + sd * model.forward(phi)
        else:
            pred = phi @ model
        newly = ~stopped & _stop_rule(Z[:, n], pred, policy.spec.itm_only)
        value[newly] = Z[newly, n]
        stopped |= newly
    return max(float(Z[0, 0]), float(value.mean()))


def feature_importance(trained, batch: PathBatch, Z: CashflowMatrix,
                       *, repeats: int = 20, seed: int = 0,
                       features: list[str] | None = None) -> dict[str, float]:
    """Permutation importance: shuffle one feature across samples, measure the shift.

    For a primal policy the score is |shuffled point estimate - baseline|; for
    a dual model it is |shuffled objective - baseline|.  The same permutation
    is applied at every date (resp. fine step) so the feature stays internally
    consistent along each path.
    """
    rng = np.random.default_rng(seed)
    if isinstance(trained, StoppingPolicy):
        if trained.spec.backend == "kernel":
            raise ConfigError("feature importance needs named feature columns; "
                              "the kernel backend has none")
        feats = build_primal_features(batch, Z, trained.spec)
        names = feats.names
        baseline = _primal_point_from_tensor(trained, feats.tensor, Z.Z)

        def score_once(col: int, perm: np.ndarray) -> float:
            tensor = feats.tensor.copy()
            tensor[:, :, col] = tensor[perm][:, :, col]
            return _primal_point_from_tensor(trained, tensor, Z.Z)

    elif isinstance(trained, DualBound):
        if trained.spec.backend == "deep":
            tensor_full, dz, names = build_dual_mlp_features(batch, trained.spec)
        elif trained.spec.backend in ("linear", "state"):
            raise ConfigError("importance for the linear dual acts on basis "
                              "martingales, not named features; use the deep dual")
        else:
            raise ConfigError("feature importance is not defined for this backend")
        ex = batch.exercise_idx
        base_mart = trained.mlp.martingale(tensor_full, dz, ex)
        baseline = float(np.max(Z.Z - base_mart, axis=1).mean())

        def score_once(col: int, perm: np.ndarray) -> float:
            tensor = tensor_full.copy()
            tensor[:, :, col] = tensor[perm][:, :, col]
            mart = trained.mlp.martingale(tensor, dz, ex)
            return float(np.max(Z.Z - mart, axis=1).mean())

    else:
        raise ConfigError("trained must be a StoppingPolicy or DualBound")

    wanted = features if features is not None else names
    scores: dict[str, float] = {}
    for name in wanted:
        if name not in names:
            raise ConfigError(f"unknown feature {name!r}; known: {names}")
        col = names.index(name)
        acc = 0.0
        for _ in range(repeats):
            perm = rng.permutation(batch.n_paths)
            acc += abs(score_once(col, perm) - baseline)
        scores[name] = acc / repeats
    return scores

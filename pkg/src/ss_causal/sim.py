"""Data-generating processes, Monte-Carlo truth computation, oracle
estimators, the replication engine, and table builders."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist
from typing import Optional

import numpy as np
from scipy.special import expit, ndtr
from scipy.stats import norm

from . import estimators, smoothing
from .accum import cmean, cvar
from .data import Dataset, split_folds
from .errors import SsCausalError, ValidationError

PROPENSITY_MODELS = ("i", "ii", "iii")
OUTCOME_MODELS = ("a", "b", "c", "d", "e")
PI_METHODS = ("lin", "quad", "oracle")
OUTCOME_METHODS = ("ks1", "ks2", "pr", "oracle")
DEFAULT_TRUTH_DRAWS = 1_000_000
MAX_FAILURE_FRACTION = 0.02
# Reference design for the oracle relative efficiencies: the semi-supervised
# estimator averages the outcome model over n + N points, so its variance
# keeps a nu * var term with nu = n / (n + N) at the reference sample sizes.
ORE_REFERENCE_N = 200
ORE_REFERENCE_BIG_N = 10_000


@dataclass(frozen=True)
class DgpSpec:
    """Simulation data-generating process: X ~ N(0, I_p), T | X ~
    Bernoulli(pi(X)), Y | X ~ N(m(X), 1)."""

    p: int
    q: int
    propensity: str  # i | ii | iii
    outcome: str  # a | b | c | d | e

    def __post_init__(self):
        if self.propensity not in PROPENSITY_MODELS:
            raise ValidationError(f"unknown propensity model '{self.propensity}'")
        if self.outcome not in OUTCOME_MODELS:
            raise ValidationError(f"unknown outcome model '{self.outcome}'")
        if not 1 <= self.q <= self.p:
            raise ValidationError("need 1 <= q <= p")
        if self.outcome in ("d", "e") and self.p != 10:
            raise ValidationError(f"outcome model ({self.outcome}) requires p=10")
        if self.outcome == "e":
            if self.q != self.p:
                raise ValidationError("outcome model (e) requires q = p")
            if self.p % 2 != 0:
                raise ValidationError("outcome model (e) requires even p")

    def pi(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = x[:, : self.q].sum(axis=1)
        eta = s / math.sqrt(self.q)
        if self.propensity == "ii":
            eta = eta + s**2 / (2 * self.q)
        elif self.propensity == "iii":
            eta = eta + np.sum(x[:, : self.q] ** 2, axis=1) / (2 * self.q)
        return expit(eta)

    def m(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = x[:, : self.q].sum(axis=1)
        if self.outcome == "a":
            return s
        if self.outcome == "b":
            return s + s**2 / self.q
        if self.outcome == "c":
            return s + np.sum(x[:, : self.q] ** 2, axis=1) / 3.0
        if self.outcome == "d":
            return np.zeros(x.shape[0])
        # (e): sum of all coordinates times (1 + 2 * (second-half sum) / p)
        half = self.p // 2
        s_all = x.sum(axis=1)
        s_half = x[:, half:].sum(axis=1)
        return s_all * (1.0 + 2.0 * s_half / self.p)

    def phi(self, x: np.ndarray, theta: float, tau: float) -> np.ndarray:
        """phi(x, theta) = P(Y < theta | X=x) - tau = Phi(theta - m(x)) - tau."""
        return ndtr(theta - self.m(x)) - tau

    def conditional_density(self, x: np.ndarray, theta: float) -> np.ndarray:
        return norm.pdf(theta - self.m(x))


@dataclass(frozen=True)
class TrueTargets:
    mu1: float
    theta1: float
    mu0: float
    theta0: float
    ore_ate: float
    ore_qte: float


def draw_dataset(spec: DgpSpec, n: int, big_n: int, seed: int) -> Dataset:
    """One simulated dataset: first n rows labeled, remaining big_n unlabeled."""
    rng = np.random.default_rng(seed)
    total = n + big_n
    x = rng.standard_normal((total, spec.p))
    t = (rng.random(total) < spec.pi(x)).astype(float)
    y = spec.m(x[:n]) + rng.standard_normal(n)
    return Dataset(
        labeled_y=y,
        labeled_t=t[:n],
        labeled_x=x[:n],
        unlabeled_x=x[n:],
        unlabeled_t=t[n:] if big_n else None,
    )


@lru_cache(maxsize=64)
def _true_targets_cached(
    p: int, q: int, propensity: str, outcome: str, tau: float, mc_draws: int, seed: int
) -> TrueTargets:
    spec = DgpSpec(p=p, q=q, propensity=propensity, outcome=outcome)
    if outcome == "d":
        # null model: Y ~ N(0,1) independent of X, so the truths are analytic
        mu = 0.0
        theta = NormalDist().inv_cdf(tau)
    else:
        mu = None
        theta = None
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((mc_draws, p))
    m_x = spec.m(x)
    y = m_x + rng.standard_normal(mc_draws)
    t = (rng.random(mc_draws) < spec.pi(x)).astype(float)
    if mu is None:
        mu = float(y.mean())
        theta = float(np.quantile(y, tau))
    pi_x = spec.pi(x)
    nu = ORE_REFERENCE_N / (ORE_REFERENCE_N + ORE_REFERENCE_BIG_N)
    resid_term = t * (y - m_x) / pi_x
    lam2_ss = float(np.var(resid_term)) + nu * float(np.var(m_x))
    lam2_sup = float(np.var(resid_term + m_x - mu))
    psi = (y < theta).astype(float) - tau
    phi = ndtr(theta - m_x) - tau
    q_term = t * (psi - phi) / pi_x
    sig2_ss = float(np.var(q_term)) + nu * float(np.var(phi))
    sig2_sup = float(np.var(q_term + phi))
    return TrueTargets(
        mu1=mu,
        theta1=theta,
        mu0=mu,
        theta0=theta,
        ore_ate=lam2_sup / lam2_ss,
        ore_qte=sig2_sup / sig2_ss,
    )


def true_targets(
    spec: DgpSpec, tau: float, mc_draws: int = DEFAULT_TRUTH_DRAWS, seed: int = 20260823
) -> TrueTargets:
    """Monte-Carlo truths and oracle relative efficiencies for a DGP.

    Both potential-outcome arms share the outcome law, so the per-arm truths
    coincide and the difference targets are zero.
    """
    if mc_draws < 10_000:
        raise ValidationError("mc_draws must be at least 10000")
    return _true_targets_cached(
        spec.p, spec.q, spec.propensity, spec.outcome, float(tau), int(mc_draws), seed
    )


def oracle_estimators(ds: Dataset, spec: DgpSpec, tau: Optional[float] = None) -> dict:
    """Supervised estimators evaluated with the true nuisance functions.

    Returns points keyed by estimand; the quantile entries are present only
    when tau is given. The density in the one-step update is the
    labeled-sample average of the analytic conditional outcome density.
    """
    y, t, x = ds.labeled_y, ds.labeled_t, ds.labeled_x
    pi_x = spec.pi(x)
    m_x = spec.m(x)
    out = {}
    for arm in (1, 0):
        t_arm = t if arm == 1 else 1.0 - t
        pi_arm = pi_x if arm == 1 else 1.0 - pi_x
        out[f"mu{arm}"] = cmean(m_x) + cmean(t_arm * (y - m_x) / pi_arm)
        if tau is not None:
            rows = np.flatnonzero(t_arm == 1.0)
            if rows.size == 0:
                raise SsCausalError(f"no arm-{arm} units for the oracle quantile")
            w = 1.0 / pi_arm[rows]
            theta_init = smoothing.ipw_weighted_quantile(y[rows], w, tau)
            f_init = cmean(spec.conditional_density(x, theta_init))
            psi = (y < theta_init).astype(float) - tau
            phi = spec.phi(x, theta_init, tau)
            update = cmean(t_arm * (phi - psi) / pi_arm) - cmean(phi)
            out[f"theta{arm}"] = theta_init + update / f_init
    out["ate"] = out["mu1"] - out["mu0"]
    if tau is not None:
        out["qte"] = out["theta1"] - out["theta0"]
    return out


@dataclass(frozen=True)
class McConfig:
    n: int
    big_n: int
    reps: int
    seed: int
    tau: Optional[float] = 0.5
    grid: tuple = (("lin", "ks1"),)  # (pi method, outcome method) pairs
    k_folds: int = 10
    clip_eps: float = 0.01
    level: float = 0.95
    variants: tuple = ("Supervised", "SS", "PseudoSupervised")
    estimands: Optional[tuple] = None  # default: mu/ate (+ theta/qte when tau)
    workers: int = 1
    truth_draws: int = DEFAULT_TRUTH_DRAWS

    def __post_init__(self):
        if self.reps < 1:
            raise ValidationError("reps must be at least 1")
        for pi_m, out_m in self.grid:
            if pi_m not in PI_METHODS or out_m not in OUTCOME_METHODS:
                raise ValidationError(f"unknown grid entry ({pi_m}, {out_m})")
        if self.estimands is None:
            ests = ["mu1", "mu0", "ate"]
            if self.tau is not None:
                ests += ["theta1", "theta0", "qte"]
            object.__setattr__(self, "estimands", tuple(ests))

    @property
    def arms(self) -> tuple:
        need0 = any(e in self.estimands for e in ("mu0", "theta0", "ate", "qte"))
        need1 = any(e in self.estimands for e in ("mu1", "theta1", "ate", "qte"))
        return tuple(a for a, need in ((1, need1), (0, need0)) if need)

    @property
    def wants_quantiles(self) -> bool:
        return self.tau is not None and any(
            e in self.estimands for e in ("theta1", "theta0", "qte")
        )

    @property
    def wants_means(self) -> bool:
        return any(e in self.estimands for e in ("mu1", "mu0", "ate"))


@dataclass(frozen=True)
class McCell:
    estimand: str
    variant: str
    pi_method: str
    outcome_method: str
    truth: float
    ese: float
    bias: float
    ase: float
    cr: float
    mse: float
    rel_eff: float  # MSE(oracle) / MSE(this cell)
    ore: float
    reps_used: int
    n_failures: int


@dataclass(frozen=True)
class McReport:
    spec: DgpSpec
    config: McConfig
    cells: tuple


def _rep_seed(seed: int, rep: int, tag: int = 0) -> int:
    return int(np.random.SeedSequence([seed, rep, tag]).generate_state(1)[0])


def run_replication(spec: DgpSpec, cfg: McConfig, rep: int) -> dict:
    """One Monte-Carlo replication: draw, fit, estimate every configured cell.

    Returns {(pi_method, outcome_method, estimand, variant):
             (point, std_error, ci_low, ci_high)}.
    """
    ds = draw_dataset(spec, cfg.n, cfg.big_n, _rep_seed(cfg.seed, rep, 0))
    plan = split_folds(cfg.n, cfg.k_folds, _rep_seed(cfg.seed, rep, 1))
    results = {}

    oracle = oracle_estimators(ds, spec, cfg.tau if cfg.wants_quantiles else None)
    for est, point in oracle.items():
        if est in cfg.estimands:
            results[("oracle", "oracle", est, "Oracle")] = (
                point,
                math.nan,
                math.nan,
                math.nan,
            )

    pi_cache = {}

    def propensity(pi_method, source):
        key = (pi_method, source)
        if key not in pi_cache:
            if pi_method == "oracle":
                pi_cache[key] = (spec.pi(ds.labeled_x), "oracle")
            else:
                basis = "quadratic" if pi_method == "quad" else "linear"
                pi_cache[key] = estimators.fit_propensity(
                    ds,
                    source,
                    basis=basis,
                    clip_eps=cfg.clip_eps,
                    plan=plan,
                    seed=_rep_seed(cfg.seed, rep, 2),
                )
        return pi_cache[key]

    source_of = {
        "SS": "U",
        "PseudoSupervised": "U",
        "Supervised": "L",
        "SSDagger": "L-crossfit",
    }
    for pi_method, outcome_method in cfg.grid:
        if pi_method == "oracle" or outcome_method == "oracle":
            continue  # oracle points come from oracle_estimators
        # group variants sharing a propensity fit so bundles are reused
        by_source = {}
        for variant in cfg.variants:
            by_source.setdefault(source_of[variant], []).append(variant)
        for source, variants in sorted(by_source.items()):
            if source == "U" and (ds.n_unlabeled == 0 or ds.unlabeled_t is None):
                source_used = "L"
            else:
                source_used = source
            pi_hat, pi_tag = propensity(pi_method, source_used)
            needs_unlabeled = any(v in ("SS", "SSDagger") for v in variants)
            seed_bundle = _rep_seed(cfg.seed, rep, 3)
            mean_bundles = {}
            if cfg.wants_means:
                for arm in cfg.arms:
                    mean_bundles[arm] = estimators.crossfit_outcome(
                        ds,
                        plan,
                        arm,
                        outcome_method,
                        pi_hat,
                        pi_tag,
                        predict_unlabeled=needs_unlabeled and ds.n_unlabeled > 0,
                        seed=seed_bundle,
                    )
            wants_quantiles = cfg.wants_quantiles and any(
                v != "SSDagger" for v in variants
            )
            phi_bundles = {}
            if wants_quantiles:
                for arm in cfg.arms:
                    theta_init = estimators.initial_quantile(ds, arm, pi_hat, cfg.tau)
                    phi_bundles[arm] = estimators.crossfit_outcome(
                        ds,
                        plan,
                        arm,
                        outcome_method,
                        pi_hat,
                        pi_tag,
                        theta=theta_init,
                        tau=cfg.tau,
                        predict_unlabeled=needs_unlabeled and ds.n_unlabeled > 0,
                        seed=seed_bundle,
                    )
            for variant in variants:
                key = lambda est: (pi_method, outcome_method, est, variant)
                quantile_ok = wants_quantiles and variant != "SSDagger"
                for arm in cfg.arms:
                    if f"mu{arm}" in cfg.estimands:
                        rep_out = estimators.estimate_mu(
                            ds, mean_bundles[arm], arm, variant, level=cfg.level
                        )
                        results[key(f"mu{arm}")] = _pack(rep_out)
                    if quantile_ok and f"theta{arm}" in cfg.estimands:
                        rep_out = estimators.estimate_theta(
                            ds,
                            phi_bundles[arm],
                            arm,
                            cfg.tau,
                            variant,
                            level=cfg.level,
                            seed=seed_bundle,
                        )
                        results[key(f"theta{arm}")] = _pack(rep_out)
                if "ate" in cfg.estimands:
                    rep_out = estimators.estimate_ate(
                        ds, mean_bundles[1], mean_bundles[0], variant, level=cfg.level
                    )
                    results[key("ate")] = _pack(rep_out)
                if quantile_ok and "qte" in cfg.estimands:
                    rep_out = estimators.estimate_qte(
                        ds,
                        phi_bundles[1],
                        phi_bundles[0],
                        cfg.tau,
                        variant,
                        level=cfg.level,
                        seed=seed_bundle,
                    )
                    results[key("qte")] = _pack(rep_out)
    return results


def _pack(report: estimators.EstimateReport) -> tuple:
    return (report.point, report.std_error, report.ci_low, report.ci_high)


def _rep_worker(args):
    spec, cfg, rep = args
    try:
        return rep, run_replication(spec, cfg, rep), None
    except (SsCausalError, np.linalg.LinAlgError) as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


def run_monte_carlo(spec: DgpSpec, cfg: McConfig) -> McReport:
    """Replicate, aggregate, and tabulate one simulation configuration."""
    truth = true_targets(spec, cfg.tau if cfg.tau is not None else 0.5, cfg.truth_draws)
    truth_of = {
        "mu1": truth.mu1,
        "mu0": truth.mu0,
        "ate": truth.mu1 - truth.mu0,
        "theta1": truth.theta1,
        "theta0": truth.theta0,
        "qte": truth.theta1 - truth.theta0,
    }
    args = [(spec, cfg, rep) for rep in range(cfg.reps)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            raw = list(pool.map(_rep_worker, args))
    else:
        raw = [_rep_worker(a) for a in args]
    raw.sort(key=lambda item: item[0])
    failures = [(rep, msg) for rep, _, msg in raw if msg is not None]
    if len(failures) > MAX_FAILURE_FRACTION * cfg.reps:
        raise SsCausalError(
            f"{len(failures)}/{cfg.reps} replications failed; first: {failures[0]}"
        )
    per_rep = [res for _, res, msg in raw if msg is None]
    keys = sorted({k for res in per_rep for k in res})
    mse_oracle = {}
    cells = []
    # oracle MSEs first so relative efficiencies can reference them
    for key in keys:
        pi_m, out_m, est, variant = key
        if variant != "Oracle":
            continue
        points = np.array([res[key][0] for res in per_rep if key in res])
        mse_oracle[est] = cmean((points - truth_of[est]) ** 2)
    for key in keys:
        pi_m, out_m, est, variant = key
        rows = [res[key] for res in per_rep if key in res]
        points = np.array([r[0] for r in rows])
        truth_val = truth_of[est]
        bias = cmean(points) - truth_val
        ese = math.sqrt(cvar(points) * len(points) / max(len(points) - 1, 1))
        mse = cmean((points - truth_val) ** 2)
        if variant == "Oracle":
            ase = math.nan
            cr = math.nan
        else:
            ase = cmean([r[1] for r in rows])
            cr = cmean([1.0 if r[2] <= truth_val <= r[3] else 0.0 for r in rows])
        rel = mse_oracle.get(est, math.nan) / mse if mse > 0 else math.nan
        ore = truth.ore_qte if est.startswith(("theta", "qte")) else truth.ore_ate
        cells.append(
            McCell(
                estimand=est,
                variant=variant,
                pi_method=pi_m,
                outcome_method=out_m,
                truth=truth_val,
                ese=ese,
                bias=bias,
                ase=ase,
                cr=cr,
                mse=mse,
                rel_eff=rel,
                ore=ore,
                reps_used=len(rows),
                n_failures=len(failures),
            )
        )
    return McReport(spec=spec, config=cfg, cells=tuple(cells))


TABLE_COLUMNS = [
    "estimand",
    "variant",
    "pi",
    "outcome",
    "truth",
    "ESE",
    "Bias",
    "ASE",
    "CR",
    "MSE",
    "RE",
    "ORE",
    "reps",
    "failures",
]


def _cell_values(cell: McCell) -> list:
    return [
        cell.estimand,
        cell.variant,
        cell.pi_method,
        cell.outcome_method,
        cell.truth,
        cell.ese,
        cell.bias,
        cell.ase,
        cell.cr,
        cell.mse,
        cell.rel_eff,
        cell.ore,
        cell.reps_used,
        cell.n_failures,
    ]


def render_tables(report: McReport, fmt: str = "csv") -> str:
    """Serialize an McReport: 'csv' keeps full precision, 'aligned-text'
    rounds to 2 decimals (round-half-even) for display."""
    rows = [_cell_values(c) for c in report.cells]
    if fmt == "csv":
        lines = [",".join(TABLE_COLUMNS)]
        for row in rows:
            lines.append(
                ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row)
            )
        return "\n".join(lines) + "\n"
    if fmt == "aligned-text":
        display = [TABLE_COLUMNS]
        for row in rows:
            display.append(
                [
                    f"{round(v, 2):.2f}" if isinstance(v, float) else str(v)
                    for v in row
                ]
            )
        widths = [max(len(r[j]) for r in display) for j in range(len(TABLE_COLUMNS))]
        lines = [
            "  ".join(val.rjust(widths[j]) for j, val in enumerate(r)) for r in display
        ]
        return "\n".join(lines) + "\n"
    raise ValidationError(f"unknown table format '{fmt}'")

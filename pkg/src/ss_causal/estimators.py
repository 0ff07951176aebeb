"""Cross-fitting orchestration, the mean/quantile estimator variants for each
arm and their differences, variance estimators, and confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Optional

import numpy as np

from . import glm, smoothing
from .accum import cmean, csum, cvar
from .data import Dataset, FoldPlan
from .errors import ConfigurationError, DegenerateError, ValidationError

VARIANTS = ("Supervised", "SS", "PseudoSupervised", "SSDagger")
DENSITY_FLOOR = 1e-6
_NORMAL = NormalDist()


@dataclass(frozen=True)
class NuisanceBundle:
    """Cross-fitted nuisance predictions for one arm.

    ``pi_hat_labeled`` holds P(T=1 | X) at the labeled rows regardless of arm;
    arm-0 estimators use its complement. Mean bundles fill ``m_hat_*``;
    indicator bundles fill ``phi_hat_*`` and are bound to ``theta``.
    ``fold_fits`` retains the per-fold outcome fits so indicator bundles can
    be re-evaluated at a new quantile point.
    """

    arm: int
    plan: FoldPlan
    pi_hat_labeled: np.ndarray
    pi_source: str  # U | L | L-crossfit | oracle
    outcome_method: str  # ks1 | ks2 | pr | constant | oracle
    m_hat_labeled: Optional[np.ndarray] = None
    m_hat_unlabeled: Optional[np.ndarray] = None
    phi_hat_labeled: Optional[np.ndarray] = None
    phi_hat_unlabeled: Optional[np.ndarray] = None
    theta: Optional[float] = None
    tau: Optional[float] = None
    fold_fits: Optional[tuple] = None
    notes: tuple = ()

    def arm_indicator(self, t: np.ndarray) -> np.ndarray:
        return t if self.arm == 1 else 1.0 - t

    def arm_propensity(self) -> np.ndarray:
        return self.pi_hat_labeled if self.arm == 1 else 1.0 - self.pi_hat_labeled


@dataclass(frozen=True)
class EstimateReport:
    estimand: str  # mu1 | mu0 | ate | theta1 | theta0 | qte
    variant: str  # Supervised | SS | PseudoSupervised | SSDagger | Oracle
    point: float
    std_error: float
    ci_low: float
    ci_high: float
    level: float
    n: int
    n_unlabeled: int
    tau: Optional[float] = None
    notes: str = ""

    def csv_row(self) -> list:
        return [
            self.estimand,
            self.variant,
            repr(float(self.point)),
            repr(float(self.std_error)),
            repr(float(self.ci_low)),
            repr(float(self.ci_high)),
            repr(float(self.level)),
            self.n,
            self.n_unlabeled,
            "" if self.tau is None else repr(self.tau),
            self.notes,
        ]


CSV_HEADER = [
    "estimand",
    "variant",
    "point",
    "std_error",
    "ci_low",
    "ci_high",
    "level",
    "n",
    "N",
    "tau",
    "notes",
]


def confidence_interval(point: float, std_error: float, level: float):
    """point +/- z * std_error with z from a deterministic rational
    inverse-normal approximation."""
    if not 0.0 < level < 1.0:
        raise ValidationError("level must be in (0,1)")
    if std_error < 0:
        raise ValidationError("std_error must be nonnegative")
    z = _NORMAL.inv_cdf(1.0 - (1.0 - level) / 2.0)
    return point - z * std_error, point + z * std_error


def fit_propensity(
    ds: Dataset,
    source: str,
    basis: str = "linear",
    clip_eps: float = 0.01,
    penalized: Optional[bool] = None,
    plan: Optional[FoldPlan] = None,
    seed: int = 0,
) -> tuple[np.ndarray, str]:
    """P(T=1 | X) at the labeled rows.

    source 'U': one fit on the unlabeled data. source 'L': one fit on the
    whole labeled data. source 'L-crossfit': per-fold fits on the labeled
    data, each row predicted by the fit that excluded its fold.
    """
    x_lab = ds.labeled_x
    design_lab = glm.expand_quadratic_basis(x_lab) if basis == "quadratic" else x_lab

    def fit_predict(x_fit, t_fit, x_pred):
        lam = 0.0
        pen = penalized
        if pen is None:
            pen = x_fit.shape[1] >= x_fit.shape[0] / 2
        if pen:
            lam = glm.cv_select_lambda(x_fit, t_fit, "binomial", n_folds=10, seed=seed)
        fit = glm.fit_logistic(x_fit, t_fit, lam=lam, clip_eps=clip_eps)
        return fit.predict_proba(x_pred)

    if source == "U":
        if ds.unlabeled_t is None or ds.n_unlabeled == 0:
            raise ConfigurationError(
                "propensity source 'U' needs unlabeled rows with treatment"
            )
        x_unl = ds.unlabeled_x
        design_unl = glm.expand_quadratic_basis(x_unl) if basis == "quadratic" else x_unl
        return fit_predict(design_unl, ds.unlabeled_t, design_lab), "U"
    if source == "L":
        return fit_predict(design_lab, ds.labeled_t, design_lab), "L"
    if source == "L-crossfit":
        if plan is None:
            raise ConfigurationError("cross-fitted propensity needs a fold plan")
        out = np.empty(ds.n)
        for k in range(1, plan.k_folds + 1):
            train = plan.train_indices(k)
            test = plan.fold_indices(k)
            out[test] = fit_predict(
                design_lab[train], ds.labeled_t[train], design_lab[test]
            )
        return out, "L-crossfit"
    raise ConfigurationError(f"unknown propensity source '{source}'")


def _fold_seed(seed: int, arm: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, arm, fold]).generate_state(1)[0])


def _fit_fold_outcome(
    y, x, weights, method, theta, tau, penalized, seed
) -> smoothing.OutcomeFit:
    """Fit one fold's outcome model on the arm units of the training split."""
    indicator = theta is not None
    if penalized is None:
        penalized = bool(y.size) and x.shape[1] >= y.size / 2
    if method == "constant" or y.size == 0:
        if y.size == 0:
            raise DegenerateError("no arm units in training split")
        values = ((y < theta).astype(float) - tau) if indicator else y
        return smoothing.OutcomeFit(
            kind="Constant",
            constant=float((weights @ values) / weights.sum()),
            train_y=y,
            weights=weights,
            theta=theta,
            tau=tau,
        )
    if method in ("ks1", "ks2"):
        if method == "ks1":
            proj = smoothing.fit_projection_ks1(x, y, penalized=penalized, seed=seed)
        else:
            proj = smoothing.fit_projection_ks2(x, y, penalized=penalized, seed=seed)
        target = ("indicator", theta, tau) if indicator else "mean"
        n_folds = 10 if y.size >= 20 else max(2, y.size // 2)
        if y.size >= 2 * n_folds:
            kcfg = smoothing.cv_bandwidth(
                y, x, weights, proj, target=target, n_folds=n_folds, seed=seed
            )
        else:
            grid = smoothing.bandwidth_grid(proj.project(x))
            kcfg = smoothing.KernelConfig(bandwidth=float(grid[3]))
        kind = "KernelIndicator" if indicator else "KernelMean"
        return smoothing.OutcomeFit(
            kind=kind,
            projection=proj,
            kernel=kcfg,
            train_y=y,
            train_x=x,
            weights=weights,
            theta=theta,
            tau=tau,
        )
    if method == "pr":
        lam = None
        if penalized:
            family = "binomial" if indicator else "gaussian"
            resp = (y < theta).astype(float) if indicator else y
            lam = glm.cv_select_lambda(
                x, resp, family, n_folds=min(10, max(2, y.size // 2)), seed=seed
            )
        if indicator:
            resp = (y < theta).astype(float)
            try:
                logistic = glm.fit_logistic(x, resp, lam=lam or 0.0)
            except DegenerateError:
                return smoothing.OutcomeFit(
                    kind="Constant",
                    constant=float(resp.mean() - tau),
                    train_y=y,
                    train_x=x,
                    weights=weights,
                    theta=theta,
                    tau=tau,
                )
            return smoothing.OutcomeFit(
                kind="ParametricIndicator",
                logistic=logistic,
                train_y=y,
                train_x=x,
                weights=weights,
                theta=theta,
                tau=tau,
            )
        if penalized:
            fit = glm.fit_lasso(x, y, lam=lam)
        else:
            fit = glm.fit_ols(x, y)
        return smoothing.OutcomeFit(kind="ParametricMean", linear=fit)
    raise ConfigurationError(f"unknown outcome method '{method}'")


def crossfit_outcome(
    ds: Dataset,
    plan: FoldPlan,
    arm: int,
    method: str,
    pi_hat_labeled: np.ndarray,
    pi_source: str,
    theta: Optional[float] = None,
    tau: Optional[float] = None,
    predict_unlabeled: bool = True,
    penalized: Optional[bool] = None,
    seed: int = 0,
) -> NuisanceBundle:
    """Cross-fit the outcome model: held-out predictions at the labeled rows,
    K-fold-averaged predictions at the unlabeled rows.

    For arm 0 the roles of T and 1-T and of pi and 1-pi are swapped.
    """
    if arm not in (0, 1):
        raise ValidationError("arm must be 0 or 1")
    indicator = theta is not None
    if indicator and (tau is None or not 0.0 < tau < 1.0):
        raise ValidationError("indicator bundle needs tau in (0,1)")
    t_arm = ds.labeled_t if arm == 1 else 1.0 - ds.labeled_t
    pi_arm = pi_hat_labeled if arm == 1 else 1.0 - pi_hat_labeled
    labeled_pred = np.empty(ds.n)
    unlabeled_pred = np.zeros(ds.n_unlabeled) if predict_unlabeled else None
    fold_fits = []
    notes = []
    k_folds = plan.k_folds
    for k in range(1, k_folds + 1):
        train = plan.train_indices(k)
        test = plan.fold_indices(k)
        arm_rows = train[t_arm[train] == 1.0]
        fold_seed = _fold_seed(seed, arm, k)
        try:
            fit = _fit_fold_outcome(
                ds.labeled_y[arm_rows],
                ds.labeled_x[arm_rows],
                1.0 / pi_arm[arm_rows],
                method,
                theta,
                tau,
                penalized,
                fold_seed,
            )
        except DegenerateError:
            # fall back to the global arm mean (recorded)
            all_arm = np.flatnonzero(t_arm == 1.0)
            if all_arm.size == 0:
                raise DegenerateError(f"no arm-{arm} units in the labeled data")
            fit = _fit_fold_outcome(
                ds.labeled_y[all_arm],
                ds.labeled_x[all_arm],
                1.0 / pi_arm[all_arm],
                "constant",
                theta,
                tau,
                penalized,
                fold_seed,
            )
            notes.append(f"fold {k}: constant fallback")
        fold_fits.append(fit)
        labeled_pred[test] = fit.predict(ds.labeled_x[test])
        if predict_unlabeled and ds.n_unlabeled:
            unlabeled_pred += fit.predict(ds.unlabeled_x) / k_folds
    kwargs = dict(
        arm=arm,
        plan=plan,
        pi_hat_labeled=np.asarray(pi_hat_labeled, dtype=float),
        pi_source=pi_source,
        outcome_method=method,
        fold_fits=tuple(fold_fits),
        notes=tuple(notes),
        theta=theta,
        tau=tau,
    )
    if indicator:
        return NuisanceBundle(
            phi_hat_labeled=labeled_pred, phi_hat_unlabeled=unlabeled_pred, **kwargs
        )
    return NuisanceBundle(
        m_hat_labeled=labeled_pred, m_hat_unlabeled=unlabeled_pred, **kwargs
    )


def _check_variant(bundle: NuisanceBundle, variant: str, n_unlabeled: int = 1):
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant '{variant}'")
    if bundle.pi_source == "oracle":
        return
    needed = {
        "SS": "U",
        "PseudoSupervised": "U",
        "Supervised": "L",
        "SSDagger": "L-crossfit",
    }[variant]
    if n_unlabeled == 0 and variant in ("SS", "PseudoSupervised"):
        # no unlabeled rows: the U-side fit cannot exist, any labeled fit is
        # accepted and the estimator collapses to the supervised form
        return
    if bundle.pi_source != needed:
        raise ConfigurationError(
            f"variant {variant} needs propensity source '{needed}', "
            f"bundle has '{bundle.pi_source}'"
        )


def _mu_with_influence(ds: Dataset, bundle: NuisanceBundle, variant: str):
    _check_variant(bundle, variant, ds.n_unlabeled)
    if bundle.m_hat_labeled is None:
        raise ConfigurationError("mean estimation needs a mean bundle")
    t_arm = bundle.arm_indicator(ds.labeled_t)
    pi_arm = bundle.arm_propensity()
    m_lab = bundle.m_hat_labeled
    g = t_arm * (ds.labeled_y - m_lab) / pi_arm
    if variant in ("SS", "SSDagger") and ds.n_unlabeled > 0:
        if bundle.m_hat_unlabeled is None:
            raise ConfigurationError("SS estimation needs unlabeled predictions")
        first = (csum(m_lab) + csum(bundle.m_hat_unlabeled)) / (ds.n + ds.n_unlabeled)
    else:
        first = cmean(m_lab)
    point = first + cmean(g)
    if variant == "Supervised":
        influence = g + m_lab - point
    else:
        influence = g
    std_error = (cvar(influence) / ds.n) ** 0.5
    return point, std_error, influence


def estimate_mu(
    ds: Dataset, bundle: NuisanceBundle, arm: int, variant: str, level: float = 0.95
) -> EstimateReport:
    """Doubly-robust mean of the potential outcome for one arm."""
    if arm != bundle.arm:
        raise ConfigurationError("bundle was built for the other arm")
    point, std_error, _ = _mu_with_influence(ds, bundle, variant)
    low, high = confidence_interval(point, std_error, level)
    return EstimateReport(
        estimand=f"mu{arm}",
        variant=variant,
        point=point,
        std_error=std_error,
        ci_low=low,
        ci_high=high,
        level=level,
        n=ds.n,
        n_unlabeled=ds.n_unlabeled,
        notes="; ".join(bundle.notes),
    )


def estimate_ate(
    ds: Dataset,
    bundle1: NuisanceBundle,
    bundle0: NuisanceBundle,
    variant: str,
    level: float = 0.95,
) -> EstimateReport:
    """Difference of the two arm means with the joint variance estimator."""
    ds.require_both_arms()
    if bundle1.arm != 1 or bundle0.arm != 0:
        raise ConfigurationError("bundles must be (arm 1, arm 0)")
    if bundle1.plan.k_folds != bundle0.plan.k_folds or not np.array_equal(
        bundle1.plan.assignment, bundle0.plan.assignment
    ):
        raise ConfigurationError("arm bundles use different fold plans")
    if not np.array_equal(bundle1.pi_hat_labeled, bundle0.pi_hat_labeled):
        raise ConfigurationError("arm bundles use different propensity fits")
    p1, se1, inf1 = _mu_with_influence(ds, bundle1, variant)
    p0, se0, inf0 = _mu_with_influence(ds, bundle0, variant)
    point = p1 - p0
    std_error = (cvar(inf1 - inf0) / ds.n) ** 0.5
    low, high = confidence_interval(point, std_error, level)
    return EstimateReport(
        estimand="ate",
        variant=variant,
        point=point,
        std_error=std_error,
        ci_low=low,
        ci_high=high,
        level=level,
        n=ds.n,
        n_unlabeled=ds.n_unlabeled,
        notes="; ".join(bundle1.notes + bundle0.notes),
    )


def initial_quantile(
    ds: Dataset, arm: int, pi_hat_labeled: np.ndarray, tau: float
) -> float:
    """IPW weighted left-continuous quantile of the arm's observed outcomes."""
    t_arm = ds.labeled_t if arm == 1 else 1.0 - ds.labeled_t
    pi_arm = pi_hat_labeled if arm == 1 else 1.0 - pi_hat_labeled
    rows = np.flatnonzero(t_arm == 1.0)
    if rows.size == 0:
        raise DegenerateError(f"no arm-{arm} units for the initial quantile")
    return smoothing.ipw_weighted_quantile(
        ds.labeled_y[rows], 1.0 / pi_arm[rows], tau
    )


def _density_fit(ds: Dataset, bundle: NuisanceBundle, seed: int = 0):
    """Weighted KDE inputs and CV bandwidth for the bundle's arm."""
    t_arm = bundle.arm_indicator(ds.labeled_t)
    pi_arm = bundle.arm_propensity()
    rows = np.flatnonzero(t_arm == 1.0)
    y = ds.labeled_y[rows]
    w = 1.0 / pi_arm[rows]
    n_folds = 10 if y.size >= 20 else max(2, y.size // 2)
    if y.size >= 2 * n_folds:
        kcfg = smoothing.cv_bandwidth(
            y, y[:, None], w, proj=None, target="density", n_folds=n_folds, seed=seed
        )
    else:
        grid = smoothing.bandwidth_grid(y[:, None])
        kcfg = smoothing.KernelConfig(bandwidth=float(grid[3]))
    return y, w, kcfg


def _reevaluate_phi_labeled(
    ds: Dataset, bundle: NuisanceBundle, theta: float
) -> np.ndarray:
    """Held-out phi predictions with the same per-fold fits re-bound to a new
    quantile point (same projection, bandwidth, and weights)."""
    out = np.empty(ds.n)
    for k in range(1, bundle.plan.k_folds + 1):
        test = bundle.plan.fold_indices(k)
        out[test] = bundle.fold_fits[k - 1].with_theta(theta).predict(ds.labeled_x[test])
    return out


def _theta_with_influence(
    ds: Dataset, bundle: NuisanceBundle, tau: float, variant: str, seed: int = 0
):
    _check_variant(bundle, variant, ds.n_unlabeled)
    if variant == "SSDagger":
        raise ConfigurationError("quantile estimation supports Supervised/SS/Pseudo")
    if bundle.phi_hat_labeled is None or bundle.theta is None:
        raise ConfigurationError("quantile estimation needs an indicator bundle")
    theta_init = bundle.theta
    t_arm = bundle.arm_indicator(ds.labeled_t)
    pi_arm = bundle.arm_propensity()
    kde_y, kde_w, kde_cfg = _density_fit(ds, bundle, seed=seed)
    f_init = smoothing.ipw_kde(kde_y, kde_w, kde_cfg, theta_init)
    if f_init <= DENSITY_FLOOR:
        raise DegenerateError("estimated density at the initial quantile is zero")
    psi = (ds.labeled_y < theta_init).astype(float) - tau
    phi_lab = bundle.phi_hat_labeled
    correction = cmean(t_arm * (phi_lab - psi) / pi_arm)
    if variant == "SS" and ds.n_unlabeled > 0:
        if bundle.phi_hat_unlabeled is None:
            raise ConfigurationError("SS estimation needs unlabeled predictions")
        last = (csum(phi_lab) + csum(bundle.phi_hat_unlabeled)) / (
            ds.n + ds.n_unlabeled
        )
    else:
        last = cmean(phi_lab)
    point = theta_init + (correction - last) / f_init
    # variance pieces at the updated point
    f_new = smoothing.ipw_kde(kde_y, kde_w, kde_cfg, point)
    if f_new <= DENSITY_FLOOR:
        raise DegenerateError("estimated density at the updated quantile is zero")
    psi_new = (ds.labeled_y < point).astype(float) - tau
    phi_new = _reevaluate_phi_labeled(ds, bundle, point)
    influence = t_arm * (psi_new - phi_new) / (pi_arm * f_new)
    std_error = (cvar(influence) / ds.n) ** 0.5
    return point, std_error, influence


def estimate_theta(
    ds: Dataset,
    bundle: NuisanceBundle,
    arm: int,
    tau: float,
    variant: str,
    level: float = 0.95,
    seed: int = 0,
) -> EstimateReport:
    """One-step quantile of the potential outcome for one arm."""
    if arm != bundle.arm:
        raise ConfigurationError("bundle was built for the other arm")
    if not 0.0 < tau < 1.0:
        raise ValidationError("tau must be in (0,1)")
    point, std_error, _ = _theta_with_influence(ds, bundle, tau, variant, seed=seed)
    low, high = confidence_interval(point, std_error, level)
    return EstimateReport(
        estimand=f"theta{arm}",
        variant=variant,
        point=point,
        std_error=std_error,
        ci_low=low,
        ci_high=high,
        level=level,
        n=ds.n,
        n_unlabeled=ds.n_unlabeled,
        tau=tau,
        notes="; ".join(bundle.notes),
    )


def estimate_qte(
    ds: Dataset,
    bundle1: NuisanceBundle,
    bundle0: NuisanceBundle,
    tau: float,
    variant: str,
    level: float = 0.95,
    seed: int = 0,
) -> EstimateReport:
    """Difference of the two arm quantiles with the joint variance."""
    ds.require_both_arms()
    if bundle1.arm != 1 or bundle0.arm != 0:
        raise ConfigurationError("bundles must be (arm 1, arm 0)")
    if not np.array_equal(bundle1.pi_hat_labeled, bundle0.pi_hat_labeled):
        raise ConfigurationError("arm bundles use different propensity fits")
    p1, se1, inf1 = _theta_with_influence(ds, bundle1, tau, variant, seed=seed)
    p0, se0, inf0 = _theta_with_influence(ds, bundle0, tau, variant, seed=seed)
    point = p1 - p0
    std_error = (cvar(inf1 - inf0) / ds.n) ** 0.5
    low, high = confidence_interval(point, std_error, level)
    return EstimateReport(
        estimand="qte",
        variant=variant,
        point=point,
        std_error=std_error,
        ci_low=low,
        ci_high=high,
        level=level,
        n=ds.n,
        n_unlabeled=ds.n_unlabeled,
        tau=tau,
        notes="; ".join(bundle1.notes + bundle0.notes),
    )

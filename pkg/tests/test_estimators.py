import math

import numpy as np
import pytest

from ss_causal import estimators, glm, sim, smoothing
from ss_causal.data import Dataset, split_folds
from ss_causal.errors import (
    ConfigurationError,
    DegenerateError,
    ValidationError,
)

import oracles


def micro_dataset():
    """4 labeled + 2 unlabeled rows with simple coordinates."""
    return Dataset(
        labeled_y=np.array([1.0, 2.0, 3.0, 4.0]),
        labeled_t=np.array([1.0, 0.0, 1.0, 0.0]),
        labeled_x=np.array([[0.5], [1.0], [-0.5], [2.0]]),
        unlabeled_x=np.array([[0.25], [-1.5]]),
        unlabeled_t=np.array([1.0, 0.0]),
    )


def manual_bundle(ds, arm, pi_vals, m_lab, m_unl, pi_source="U"):
    plan = split_folds(ds.n, 2, seed=0)
    return estimators.NuisanceBundle(
        arm=arm,
        plan=plan,
        pi_hat_labeled=np.asarray(pi_vals, dtype=float),
        pi_source=pi_source,
        outcome_method="constant",
        m_hat_labeled=np.asarray(m_lab, dtype=float),
        m_hat_unlabeled=None if m_unl is None else np.asarray(m_unl, dtype=float),
    )


# ------------------------------------------------------ confidence_interval


def test_ci_standard_normal_quantile():
    lo, hi = estimators.confidence_interval(0.0, 1.0, 0.95)
    assert lo == pytest.approx(-1.959964, abs=1e-5)
    assert hi == pytest.approx(1.959964, abs=1e-5)


def test_ci_zero_std_error_degenerate():
    assert estimators.confidence_interval(3.0, 0.0, 0.95) == (3.0, 3.0)


def test_ci_level_90_matches_bisection_oracle():
    lo, hi = estimators.confidence_interval(2.0, 0.5, 0.90)
    z = oracles.inv_normal_bisect(0.95)
    assert hi - 2.0 == pytest.approx(0.5 * z, abs=1e-7)
    assert hi - 2.0 == pytest.approx(0.822427, abs=1e-5)
    assert lo == pytest.approx(2.0 - 0.822427, abs=1e-5)


def test_ci_rejects_bad_level():
    with pytest.raises(ValidationError):
        estimators.confidence_interval(0.0, 1.0, 1.5)


# ---------------------------------------------------------- fit_propensity


def test_propensity_source_l_is_whole_sample_fit():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((80, 2))
    t = (rng.random(80) < 0.5).astype(float)
    ds = Dataset(labeled_y=rng.standard_normal(80), labeled_t=t, labeled_x=x,
                 unlabeled_x=np.empty((0, 2)))
    pi_hat, tag = estimators.fit_propensity(ds, "L")
    assert tag == "L"
    fit = glm.fit_logistic(x, t, clip_eps=0.01)
    np.testing.assert_allclose(pi_hat, fit.predict_proba(x), atol=1e-9)


def test_propensity_source_u_requires_unlabeled_treatment():
    rng = np.random.default_rng(1)
    ds = Dataset(labeled_y=rng.standard_normal(10),
                 labeled_t=(rng.random(10) < 0.5).astype(float),
                 labeled_x=rng.standard_normal((10, 1)),
                 unlabeled_x=np.empty((0, 1)))
    with pytest.raises(ConfigurationError):
        estimators.fit_propensity(ds, "U")


def test_propensity_crossfit_rows_predicted_out_of_fold():
    rng = np.random.default_rng(2)
    n = 60
    x = rng.standard_normal((n, 1))
    t = (rng.random(n) < 0.5).astype(float)
    ds = Dataset(labeled_y=rng.standard_normal(n), labeled_t=t, labeled_x=x,
                 unlabeled_x=np.empty((0, 1)))
    plan = split_folds(n, 3, seed=7)
    pi_hat, tag = estimators.fit_propensity(ds, "L-crossfit", plan=plan)
    assert tag == "L-crossfit"
    for k in (1, 2, 3):
        train = plan.train_indices(k)
        test = plan.fold_indices(k)
        fit = glm.fit_logistic(x[train], t[train], clip_eps=0.01)
        np.testing.assert_allclose(pi_hat[test], fit.predict_proba(x[test]), atol=1e-9)


# --------------------------------------------------------- crossfit_outcome


def test_crossfit_constant_method():
    ds = micro_dataset()
    plan = split_folds(4, 2, seed=0)
    ds_const = Dataset(labeled_y=np.full(4, 5.0), labeled_t=ds.labeled_t,
                       labeled_x=ds.labeled_x, unlabeled_x=ds.unlabeled_x,
                       unlabeled_t=ds.unlabeled_t)
    bundle = estimators.crossfit_outcome(ds_const, plan, 1, "constant",
                                         np.full(4, 0.5), "U")
    np.testing.assert_allclose(bundle.m_hat_labeled, 5.0, atol=1e-12)
    np.testing.assert_allclose(bundle.m_hat_unlabeled, 5.0, atol=1e-12)


def test_crossfit_two_fold_linear_hand_oracle():
    # two folds of three collinear units each, all treated; each fold is
    # predicted by the exact line through the opposite fold's points
    y = np.array([1.0, 3.0, 5.0, 2.0, 4.0, 8.0])
    x = np.array([[0.0], [1.0], [2.0], [0.0], [1.0], [3.0]])
    ds = Dataset(labeled_y=y, labeled_t=np.ones(6), labeled_x=x,
                 unlabeled_x=np.array([[4.0]]), unlabeled_t=np.array([1.0]))
    plan = estimators.FoldPlan(k_folds=2,
                               assignment=np.array([1, 1, 1, 2, 2, 2]))
    bundle = estimators.crossfit_outcome(ds, plan, 1, "pr", np.full(6, 0.5), "U")
    # fold 1 rows come from the line through fold 2: y = 2 + 2x
    np.testing.assert_allclose(bundle.m_hat_labeled[:3], [2.0, 4.0, 6.0],
                               atol=1e-9)
    # fold 2 rows come from the line through fold 1: y = 1 + 2x
    np.testing.assert_allclose(bundle.m_hat_labeled[3:], [1.0, 3.0, 7.0],
                               atol=1e-9)
    # unlabeled prediction is the average of the two fold fits at x=4
    np.testing.assert_allclose(bundle.m_hat_unlabeled[0], (9.0 + 10.0) / 2.0,
                               atol=1e-9)


def test_crossfit_unlabeled_is_mean_of_fold_predictions():
    rng = np.random.default_rng(3)
    n = 30
    ds = Dataset(labeled_y=rng.standard_normal(n),
                 labeled_t=np.ones(n),
                 labeled_x=rng.standard_normal((n, 2)),
                 unlabeled_x=rng.standard_normal((1, 2)),
                 unlabeled_t=np.array([1.0]))
    plan = split_folds(n, 3, seed=1)
    bundle = estimators.crossfit_outcome(ds, plan, 1, "pr", np.full(n, 0.5), "U")
    per_fold = [fit.predict(ds.unlabeled_x)[0] for fit in bundle.fold_fits]
    assert bundle.m_hat_unlabeled[0] == pytest.approx(np.mean(per_fold), abs=1e-12)


def test_crossfit_labeled_predictions_are_held_out():
    rng = np.random.default_rng(4)
    n = 24
    ds = Dataset(labeled_y=rng.standard_normal(n),
                 labeled_t=np.ones(n),
                 labeled_x=rng.standard_normal((n, 1)),
                 unlabeled_x=np.empty((0, 1)))
    plan = split_folds(n, 4, seed=2)
    bundle = estimators.crossfit_outcome(ds, plan, 1, "pr", np.full(n, 0.5), "L",
                                         predict_unlabeled=False)
    for k in range(1, 5):
        test = plan.fold_indices(k)
        refit = bundle.fold_fits[k - 1].predict(ds.labeled_x[test])
        np.testing.assert_allclose(bundle.m_hat_labeled[test], refit, atol=1e-12)


def test_crossfit_empty_arm_fold_uses_constant_fallback():
    # only two treated units, both in fold 1: fold 2's training split has
    # treated units, fold 1's does not
    y = np.array([1.0, 2.0, 3.0, 4.0])
    t = np.array([1.0, 1.0, 0.0, 0.0])
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    ds = Dataset(labeled_y=y, labeled_t=t, labeled_x=x, unlabeled_x=np.empty((0, 1)))
    plan = estimators.FoldPlan(k_folds=2, assignment=np.array([1, 1, 2, 2]))
    bundle = estimators.crossfit_outcome(ds, plan, 1, "pr", np.full(4, 0.5), "L",
                                         predict_unlabeled=False)
    assert any("constant fallback" in note for note in bundle.notes)


def test_crossfit_no_arm_units_rejected():
    ds = Dataset(labeled_y=np.array([1.0, 2.0]), labeled_t=np.array([0.0, 0.0]),
                 labeled_x=np.array([[0.0], [1.0]]), unlabeled_x=np.empty((0, 1)))
    plan = estimators.FoldPlan(k_folds=2, assignment=np.array([1, 2]))
    with pytest.raises(DegenerateError):
        estimators.crossfit_outcome(ds, plan, 1, "pr", np.full(2, 0.5), "L",
                                    predict_unlabeled=False)


# -------------------------------------------------------------- estimate_mu


def test_mu_zero_residuals_gives_pooled_mean_and_zero_se():
    ds = micro_dataset()
    m_lab = ds.labeled_y.copy()
    m_unl = np.array([10.0, 20.0])
    bundle = manual_bundle(ds, 1, np.full(4, 0.5), m_lab, m_unl)
    report = estimators.estimate_mu(ds, bundle, 1, "SS")
    pooled = math.fsum(list(m_lab) + list(m_unl)) / 6
    assert report.point == pytest.approx(pooled, abs=1e-12)
    assert report.std_error == 0.0


@pytest.mark.parametrize("variant", ["Supervised", "SS", "PseudoSupervised",
                                     "SSDagger"])
def test_mu_micro_instance_matches_hand_sum(variant):
    ds = micro_dataset()
    pi = np.array([0.4, 0.6, 0.3, 0.8])
    m_lab = np.array([0.9, 2.2, 2.8, 4.1])
    m_unl = np.array([1.5, 2.5])
    source = {"Supervised": "L", "SS": "U", "PseudoSupervised": "U",
              "SSDagger": "L-crossfit"}[variant]
    for arm in (1, 0):
        bundle = manual_bundle(ds, arm, pi, m_lab, m_unl, pi_source=source)
        report = estimators.estimate_mu(ds, bundle, arm, variant)
        t_arm = ds.labeled_t if arm == 1 else 1.0 - ds.labeled_t
        pi_arm = pi if arm == 1 else 1.0 - pi
        point, se = oracles.mu_hand_sum(ds.labeled_y, t_arm, pi_arm, m_lab,
                                        m_unl, variant)
        assert report.point == pytest.approx(point, abs=1e-12)
        assert report.std_error == pytest.approx(se, abs=1e-12)


def test_mu_wrong_arm_bundle_rejected():
    ds = micro_dataset()
    bundle = manual_bundle(ds, 1, np.full(4, 0.5), np.zeros(4), np.zeros(2))
    with pytest.raises(ConfigurationError):
        estimators.estimate_mu(ds, bundle, 0, "SS")


def test_mu_variant_propensity_source_checked():
    ds = micro_dataset()
    bundle = manual_bundle(ds, 1, np.full(4, 0.5), np.zeros(4), np.zeros(2),
                           pi_source="L")
    with pytest.raises(ConfigurationError):
        estimators.estimate_mu(ds, bundle, 1, "SS")


def test_mu_variant_collapse_without_unlabeled_rows():
    # with N=0 and identical propensity values, SS and PseudoSupervised
    # coincide with Supervised bit-exactly up to the influence recentering
    rng = np.random.default_rng(5)
    n = 40
    ds = Dataset(labeled_y=rng.standard_normal(n),
                 labeled_t=(rng.random(n) < 0.6).astype(float),
                 labeled_x=rng.standard_normal((n, 2)),
                 unlabeled_x=np.empty((0, 2)))
    pi = np.clip(rng.uniform(0.2, 0.8, n), 0.01, 0.99)
    m_lab = rng.standard_normal(n)
    points = {}
    for variant, source in (("Supervised", "L"), ("SS", "U"),
                            ("PseudoSupervised", "U")):
        bundle = manual_bundle(ds, 1, pi, m_lab, None, pi_source=source)
        points[variant] = estimators.estimate_mu(ds, bundle, 1, variant).point
    assert points["SS"] == points["Supervised"]
    assert points["PseudoSupervised"] == points["Supervised"]


def test_mu_scale_equivariance():
    ds = micro_dataset()
    pi = np.array([0.4, 0.6, 0.3, 0.8])
    m_lab = np.array([0.9, 2.2, 2.8, 4.1])
    m_unl = np.array([1.5, 2.5])
    a, b = -2.5, 7.0
    ds2 = Dataset(labeled_y=a * ds.labeled_y + b, labeled_t=ds.labeled_t,
                  labeled_x=ds.labeled_x, unlabeled_x=ds.unlabeled_x,
                  unlabeled_t=ds.unlabeled_t)
    for variant, source in (("Supervised", "L"), ("SS", "U")):
        r1 = estimators.estimate_mu(
            ds, manual_bundle(ds, 1, pi, m_lab, m_unl, source), 1, variant)
        r2 = estimators.estimate_mu(
            ds2, manual_bundle(ds2, 1, pi, a * m_lab + b, a * m_unl + b, source),
            1, variant)
        assert r2.point == pytest.approx(a * r1.point + b, abs=1e-12)
        assert r2.std_error == pytest.approx(abs(a) * r1.std_error, abs=1e-12)


# ------------------------------------------------------------- estimate_ate


def test_ate_point_is_difference_and_variance_identity():
    ds = micro_dataset()
    pi = np.array([0.4, 0.6, 0.3, 0.8])
    b1 = manual_bundle(ds, 1, pi, np.array([1.0, 2.0, 2.5, 4.0]),
                       np.array([1.0, 2.0]))
    b0 = manual_bundle(ds, 0, pi, np.array([1.1, 1.9, 3.1, 3.9]),
                       np.array([0.5, 1.5]))
    r1 = estimators.estimate_mu(ds, b1, 1, "SS")
    r0 = estimators.estimate_mu(ds, b0, 0, "SS")
    ate = estimators.estimate_ate(ds, b1, b0, "SS")
    assert ate.point == pytest.approx(r1.point - r0.point, abs=1e-12)
    # joint variance equals var of the influence difference computed directly
    g1 = ds.labeled_t * (ds.labeled_y - b1.m_hat_labeled) / pi
    g0 = (1 - ds.labeled_t) * (ds.labeled_y - b0.m_hat_labeled) / (1 - pi)
    diff = g1 - g0
    var = float(np.mean((diff - diff.mean()) ** 2))
    assert ate.std_error == pytest.approx(math.sqrt(var / 4), abs=1e-12)


def test_ate_requires_both_arms_present():
    ds = Dataset(labeled_y=np.ones(3), labeled_t=np.ones(3),
                 labeled_x=np.zeros((3, 1)), unlabeled_x=np.empty((0, 1)))
    plan = estimators.FoldPlan(k_folds=2, assignment=np.array([1, 2, 1]))
    b = estimators.NuisanceBundle(arm=1, plan=plan, pi_hat_labeled=np.full(3, 0.5),
                                  pi_source="U", outcome_method="constant",
                                  m_hat_labeled=np.zeros(3))
    b0 = estimators.NuisanceBundle(arm=0, plan=plan, pi_hat_labeled=np.full(3, 0.5),
                                   pi_source="U", outcome_method="constant",
                                   m_hat_labeled=np.zeros(3))
    with pytest.raises(ValidationError):
        estimators.estimate_ate(ds, b, b0, "SS")


def test_ate_mismatched_propensities_rejected():
    ds = micro_dataset()
    b1 = manual_bundle(ds, 1, np.full(4, 0.5), np.zeros(4), np.zeros(2))
    b0 = manual_bundle(ds, 0, np.full(4, 0.6), np.zeros(4), np.zeros(2))
    with pytest.raises(ConfigurationError):
        estimators.estimate_ate(ds, b1, b0, "SS")


# --------------------------------------------------------- quantile pieces


def micro_quantile_dataset():
    return Dataset(
        labeled_y=np.array([0.2, 1.1, -0.7, 2.3, 0.9]),
        labeled_t=np.array([1.0, 1.0, 0.0, 1.0, 0.0]),
        labeled_x=np.array([[0.1], [0.6], [-0.4], [1.2], [0.3]]),
        unlabeled_x=np.array([[0.0], [0.5], [-1.0]]),
        unlabeled_t=np.array([1.0, 0.0, 1.0]),
    )


def test_initial_quantile_matches_weighted_quantile():
    ds = micro_quantile_dataset()
    pi = np.array([0.5, 0.4, 0.3, 0.8, 0.6])
    got = estimators.initial_quantile(ds, 1, pi, 0.5)
    rows = ds.labeled_t == 1.0
    expected = oracles.weighted_quantile_scan(
        ds.labeled_y[rows], (1.0 / pi[rows]), 0.5)
    assert got == expected


def test_theta_zero_correction_returns_initial():
    # phi-hat identically 0, pi = 1, all treated, theta_init at an exact
    # sample tau-point: the one-step update vanishes
    y = np.array([1.0, 2.0, 3.0, 4.0])
    ds = Dataset(labeled_y=y, labeled_t=np.ones(4),
                 labeled_x=np.array([[0.0], [1.0], [2.0], [3.0]]),
                 unlabeled_x=np.empty((0, 1)))
    plan = split_folds(4, 2, seed=0)
    tau = 0.5
    theta_init = 3.0  # E_n I(Y < 3) = 0.5 = tau exactly
    fits = tuple(
        smoothing.OutcomeFit(kind="Constant", constant=0.0, train_y=y,
                             weights=np.ones(4), theta=theta_init, tau=tau)
        for _ in range(2)
    )
    bundle = estimators.NuisanceBundle(
        arm=1, plan=plan, pi_hat_labeled=np.ones(4), pi_source="L",
        outcome_method="constant", phi_hat_labeled=np.zeros(4),
        theta=theta_init, tau=tau, fold_fits=fits)
    report = estimators.estimate_theta(ds, bundle, 1, tau, "Supervised")
    assert report.point == pytest.approx(theta_init, abs=1e-12)


def test_theta_micro_instance_matches_hand_sum():
    ds = micro_quantile_dataset()
    pi = np.array([0.5, 0.4, 0.3, 0.8, 0.6])
    tau = 0.5
    theta_init = estimators.initial_quantile(ds, 1, pi, tau)
    phi_lab = np.array([-0.1, 0.05, 0.2, -0.3, 0.0])
    phi_unl = np.array([0.1, -0.05, 0.15])
    plan = split_folds(5, 2, seed=0)
    fits = tuple(
        smoothing.OutcomeFit(kind="Constant", constant=float(c),
                             train_y=ds.labeled_y, weights=np.ones(5),
                             theta=theta_init, tau=tau)
        for c in (0.02, -0.02)
    )
    bundle = estimators.NuisanceBundle(
        arm=1, plan=plan, pi_hat_labeled=pi, pi_source="U",
        outcome_method="constant", phi_hat_labeled=phi_lab,
        phi_hat_unlabeled=phi_unl, theta=theta_init, tau=tau, fold_fits=fits)
    report = estimators.estimate_theta(ds, bundle, 1, tau, "SS", seed=0)
    # independent point computation with the same density estimate
    rows = ds.labeled_t == 1.0
    kde_y = ds.labeled_y[rows]
    kde_w = 1.0 / pi[rows]
    grid = smoothing.bandwidth_grid(kde_y[:, None])
    f_init = smoothing.ipw_kde(kde_y, kde_w, smoothing.KernelConfig(float(grid[3])),
                               theta_init)
    expected = oracles.theta_hand_sum(ds.labeled_y, ds.labeled_t, pi, phi_lab,
                                      phi_unl, theta_init, tau, f_init, "SS")
    assert report.point == pytest.approx(expected, abs=1e-12)


def test_theta_one_step_move_bounded_by_density():
    ds = micro_quantile_dataset()
    pi = np.array([0.5, 0.4, 0.3, 0.8, 0.6])
    tau = 0.5
    theta_init = estimators.initial_quantile(ds, 1, pi, tau)
    phi_lab = np.array([-0.1, 0.05, 0.2, -0.3, 0.0])
    plan = split_folds(5, 2, seed=0)
    fits = tuple(
        smoothing.OutcomeFit(kind="Constant", constant=0.0, train_y=ds.labeled_y,
                             weights=np.ones(5), theta=theta_init, tau=tau)
        for _ in range(2)
    )
    bundle = estimators.NuisanceBundle(
        arm=1, plan=plan, pi_hat_labeled=pi, pi_source="U",
        outcome_method="constant", phi_hat_labeled=phi_lab,
        phi_hat_unlabeled=np.zeros(3), theta=theta_init, tau=tau,
        fold_fits=fits)
    report = estimators.estimate_theta(ds, bundle, 1, tau, "SS", seed=0)
    rows = ds.labeled_t == 1.0
    kde_y = ds.labeled_y[rows]
    kde_w = 1.0 / pi[rows]
    grid = smoothing.bandwidth_grid(kde_y[:, None])
    f_init = smoothing.ipw_kde(kde_y, kde_w, smoothing.KernelConfig(float(grid[3])),
                               theta_init)
    # the correction term is bounded by 1 in absolute value, so the one-step
    # move cannot exceed the reciprocal of the density at the initial point
    assert abs(report.point - theta_init) <= 1.0 / f_init + 1e-12


def test_theta_dagger_variant_rejected():
    ds = micro_quantile_dataset()
    plan = split_folds(5, 2, seed=0)
    bundle = estimators.NuisanceBundle(
        arm=1, plan=plan, pi_hat_labeled=np.full(5, 0.5), pi_source="L-crossfit",
        outcome_method="constant", phi_hat_labeled=np.zeros(5), theta=1.0,
        tau=0.5, fold_fits=())
    with pytest.raises(ConfigurationError):
        estimators.estimate_theta(ds, bundle, 1, 0.5, "SSDagger")


def test_qte_micro_difference_and_tau_passthrough():
    ds = micro_quantile_dataset()
    pi = np.array([0.5, 0.4, 0.3, 0.8, 0.6])
    tau = 0.4
    plan = split_folds(5, 2, seed=0)
    bundles = {}
    for arm in (1, 0):
        theta_init = estimators.initial_quantile(ds, arm, pi, tau)
        fits = tuple(
            smoothing.OutcomeFit(kind="Constant", constant=0.0,
                                 train_y=ds.labeled_y, weights=np.ones(5),
                                 theta=theta_init, tau=tau)
            for _ in range(2)
        )
        bundles[arm] = estimators.NuisanceBundle(
            arm=arm, plan=plan, pi_hat_labeled=pi, pi_source="U",
            outcome_method="constant", phi_hat_labeled=np.zeros(5),
            phi_hat_unlabeled=np.zeros(3), theta=theta_init, tau=tau,
            fold_fits=fits)
    r1 = estimators.estimate_theta(ds, bundles[1], 1, tau, "SS", seed=0)
    r0 = estimators.estimate_theta(ds, bundles[0], 0, tau, "SS", seed=0)
    qte = estimators.estimate_qte(ds, bundles[1], bundles[0], tau, "SS", seed=0)
    assert qte.point == pytest.approx(r1.point - r0.point, abs=1e-12)
    assert qte.tau == tau
    assert qte.estimand == "qte"


# ------------------------------------------------- distributional invariants


@pytest.mark.slow
def test_ss_variance_estimate_not_larger_than_pseudo():
    # with a conditional-expectation outcome model the semi-supervised
    # variance estimate should not exceed the pseudo-supervised one beyond
    # Monte-Carlo noise
    spec = sim.DgpSpec(p=10, q=10, propensity="i", outcome="a")
    diffs = []
    for rep in range(50):
        ds = sim.draw_dataset(spec, 500, 2000, seed=900 + rep)
        plan = split_folds(500, 10, seed=rep)
        pi_hat, tag = estimators.fit_propensity(ds, "U")
        bundle = estimators.crossfit_outcome(ds, plan, 1, "pr", pi_hat, tag,
                                             predict_unlabeled=True, seed=rep)
        ss = estimators.estimate_mu(ds, bundle, 1, "SS")
        pseudo = estimators.estimate_mu(ds, bundle, 1, "PseudoSupervised")
        diffs.append(ss.std_error**2 - pseudo.std_error**2)
    diffs = np.array(diffs)
    se = float(diffs.std(ddof=1) / math.sqrt(len(diffs)))
    assert float(diffs.mean()) <= 3 * se + 1e-12


@pytest.mark.slow
def test_ss_mean_double_robustness_under_half_correct_nuisances():
    # regime A: propensity model correct, outcome model wrong
    spec_a = sim.DgpSpec(p=10, q=10, propensity="iii", outcome="c")
    # regime B: outcome index model adequate, propensity model wrong
    spec_b = sim.DgpSpec(p=10, q=10, propensity="ii", outcome="a")
    for spec, pi_basis, method in ((spec_a, "quadratic", "pr"),
                                   (spec_b, "linear", "ks1")):
        truth = sim.true_targets(spec, 0.5).mu1
        points = []
        for rep in range(200):
            ds = sim.draw_dataset(spec, 200, 5000, seed=3000 + rep)
            plan = split_folds(200, 10, seed=rep)
            pi_hat, tag = estimators.fit_propensity(ds, "U", basis=pi_basis)
            bundle = estimators.crossfit_outcome(ds, plan, 1, method, pi_hat,
                                                 tag, predict_unlabeled=True,
                                                 seed=rep)
            points.append(estimators.estimate_mu(ds, bundle, 1, "SS").point)
        bias = abs(float(np.mean(points)) - truth)
        assert bias <= 0.03, f"{spec.propensity}/{spec.outcome}: bias {bias:.4f}"

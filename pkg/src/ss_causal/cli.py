"""Command-line interface: estimate on user data, run simulation studies,
and check the labeled-vs-unlabeled distribution assumption.

Exit codes: 0 success, 2 invalid input or configuration, 3 estimation
degeneracy (non-convergence or a vanishing density/overlap).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import data, estimators, sim
from .errors import (
    ConvergenceError,
    DegenerateError,
    SsCausalError,
)

VARIANT_NAMES = {
    "sup": "Supervised",
    "ss": "SS",
    "pseudo": "PseudoSupervised",
    "dagger": "SSDagger",
}
PI_SOURCE = {
    "Supervised": "L",
    "SS": "U",
    "PseudoSupervised": "U",
    "SSDagger": "L-crossfit",
}


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SS_CAUSAL_WORKERS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ss-causal",
        description=(
            "Doubly-robust average and quantile treatment effects from a "
            "small labeled sample plus a large unlabeled sample."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate effects from a CSV file")
    est.add_argument("--data", required=True, help="CSV with outcome/treatment/covariates")
    est.add_argument("--outcome-col", default="Y")
    est.add_argument("--treatment-col", default="T")
    est.add_argument("--covariate-cols", default=None,
                     help="comma-separated covariate columns (default: all others)")
    est.add_argument("--pi", choices=("lin", "quad"), default="lin",
                     help="propensity model basis")
    est.add_argument("--outcome-model", choices=("ks1", "ks2", "pr"), default="ks1")
    est.add_argument("--estimand", choices=("ate", "qte", "both"), default="ate")
    est.add_argument("--tau", type=float, action="append", default=None,
                     help="quantile level(s); repeatable (default 0.5)")
    est.add_argument("--variant", default="ss",
                     help="comma-separated subset of sup,ss,pseudo,dagger")
    est.add_argument("--k", type=int, default=10, help="number of cross-fitting folds")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--clip-eps", type=float, default=0.01)
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--out", required=True, help="output directory")

    simp = sub.add_parser("simulate", help="run a Monte-Carlo study")
    simp.add_argument("--dgp", default="a:i",
                      help="outcome:propensity model pair, e.g. a:i or c:iii")
    simp.add_argument("--p", type=int, default=10)
    simp.add_argument("--q", type=int, default=None, help="active covariates (default p)")
    simp.add_argument("--n", type=int, default=500, help="labeled sample size")
    simp.add_argument("--N", dest="big_n", type=int, default=10000,
                      help="unlabeled sample size")
    simp.add_argument("--reps", type=int, default=500)
    simp.add_argument("--grid", default="lin+ks1",
                      help="comma-separated pi+outcome method pairs, e.g. lin+ks1,quad+pr")
    simp.add_argument("--tau", type=float, default=0.5)
    simp.add_argument("--no-quantiles", action="store_true",
                      help="skip the quantile estimands")
    simp.add_argument("--variant", default="sup,ss,pseudo",
                      help="comma-separated subset of sup,ss,pseudo,dagger")
    simp.add_argument("--k", type=int, default=10)
    simp.add_argument("--seed", type=int, default=0)
    simp.add_argument("--clip-eps", type=float, default=0.01)
    simp.add_argument("--level", type=float, default=0.95)
    simp.add_argument("--workers", type=int, default=_default_workers())
    simp.add_argument("--truth-draws", type=int, default=sim.DEFAULT_TRUTH_DRAWS)
    simp.add_argument("--out", required=True, help="output directory")

    chk = sub.add_parser("check", help="permutation test that labeling is random")
    chk.add_argument("--data", required=True)
    chk.add_argument("--outcome-col", default="Y")
    chk.add_argument("--treatment-col", default="T")
    chk.add_argument("--covariate-cols", default=None)
    chk.add_argument("--n-perm", type=int, default=1000)
    chk.add_argument("--seed", type=int, default=0)
    return parser


def _schema(args) -> dict:
    schema = {"outcome": args.outcome_col, "treatment": args.treatment_col}
    if args.covariate_cols:
        schema["covariates"] = [c.strip() for c in args.covariate_cols.split(",")]
    return schema


def _parse_variants(text: str) -> list:
    out = []
    for token in text.split(","):
        token = token.strip().lower()
        if token not in VARIANT_NAMES:
            raise SsCausalError(f"unknown variant '{token}'")
        out.append(VARIANT_NAMES[token])
    return out


def cmd_estimate(args) -> int:
    ds = data.load_csv(args.data, _schema(args))
    variants = _parse_variants(args.variant)
    taus = args.tau if args.tau else [0.5]
    for tau in taus:
        if not 0.0 < tau < 1.0:
            raise SsCausalError(f"tau must be in (0,1), got {tau}")
    if not 0.0 < args.level < 1.0:
        raise SsCausalError(f"level must be in (0,1), got {args.level}")
    if args.k < 2:
        raise SsCausalError("need at least 2 folds")

    if ds.n_unlabeled == 0:
        print(
            "warning: no unlabeled rows; semi-supervised variants collapse to "
            "the supervised estimator",
            file=sys.stderr,
        )
    elif ds.unlabeled_t is not None:
        p_value = data.mcar_permutation_test(ds, n_perm=1000, seed=args.seed)
        if p_value < 0.05:
            print(
                f"warning: labeled and unlabeled rows look distributionally "
                f"different (permutation p-value {p_value:.4f}); the "
                f"random-labeling assumption may fail",
                file=sys.stderr,
            )

    plan = data.split_folds(ds.n, args.k, args.seed)
    want_ate = args.estimand in ("ate", "both")
    want_qte = args.estimand in ("qte", "both")
    if want_qte and "SSDagger" in variants:
        print(
            "warning: quantile effects are not defined for the dagger "
            "variant; skipping it there",
            file=sys.stderr,
        )
    basis = "quadratic" if args.pi == "quad" else "linear"

    pi_cache = {}

    def propensity(source):
        if ds.n_unlabeled == 0 or (source == "U" and ds.unlabeled_t is None):
            source = "L"
        if source not in pi_cache:
            pi_cache[source] = estimators.fit_propensity(
                ds, source, basis=basis, clip_eps=args.clip_eps,
                plan=plan, seed=args.seed,
            )
        return pi_cache[source]

    reports = []
    for variant in variants:
        pi_hat, pi_tag = propensity(PI_SOURCE[variant])
        needs_unlabeled = variant in ("SS", "SSDagger") and ds.n_unlabeled > 0
        if want_ate:
            bundles = {}
            for arm in (1, 0):
                bundles[arm] = estimators.crossfit_outcome(
                    ds, plan, arm, args.outcome_model, pi_hat, pi_tag,
                    predict_unlabeled=needs_unlabeled, seed=args.seed,
                )
                reports.append(
                    estimators.estimate_mu(ds, bundles[arm], arm, variant,
                                           level=args.level)
                )
            reports.append(
                estimators.estimate_ate(ds, bundles[1], bundles[0], variant,
                                        level=args.level)
            )
        if want_qte and variant != "SSDagger":
            for tau in taus:
                bundles = {}
                for arm in (1, 0):
                    theta_init = estimators.initial_quantile(ds, arm, pi_hat, tau)
                    bundles[arm] = estimators.crossfit_outcome(
                        ds, plan, arm, args.outcome_model, pi_hat, pi_tag,
                        theta=theta_init, tau=tau,
                        predict_unlabeled=needs_unlabeled, seed=args.seed,
                    )
                    reports.append(
                        estimators.estimate_theta(ds, bundles[arm], arm, tau,
                                                  variant, level=args.level,
                                                  seed=args.seed)
                    )
                reports.append(
                    estimators.estimate_qte(ds, bundles[1], bundles[0], tau,
                                            variant, level=args.level,
                                            seed=args.seed)
                )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "estimates.csv"
    lines = [",".join(estimators.CSV_HEADER)]
    lines += [",".join(str(v) for v in r.csv_row()) for r in reports]
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(reports)} rows to {out_path}")
    return 0


def _parse_grid(text: str) -> tuple:
    grid = []
    for token in text.split(","):
        token = token.strip()
        if "+" not in token:
            raise SsCausalError(f"grid entry '{token}' must look like lin+ks1")
        pi_m, out_m = token.split("+", 1)
        grid.append((pi_m, out_m))
    return tuple(grid)


def cmd_simulate(args) -> int:
    outcome, _, propensity = args.dgp.partition(":")
    if not propensity:
        raise SsCausalError("--dgp must look like a:i (outcome:propensity)")
    q = args.q if args.q is not None else args.p
    spec = sim.DgpSpec(p=args.p, q=q, propensity=propensity, outcome=outcome)
    cfg = sim.McConfig(
        n=args.n,
        big_n=args.big_n,
        reps=args.reps,
        seed=args.seed,
        tau=None if args.no_quantiles else args.tau,
        grid=_parse_grid(args.grid),
        k_folds=args.k,
        clip_eps=args.clip_eps,
        level=args.level,
        variants=tuple(_parse_variants(args.variant)),
        workers=args.workers,
        truth_draws=args.truth_draws,
    )
    report = sim.run_monte_carlo(spec, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "mc_report.csv"
    txt_path = out_dir / "mc_report.txt"
    csv_path.write_text(sim.render_tables(report, "csv"), encoding="utf-8")
    txt_path.write_text(sim.render_tables(report, "aligned-text"), encoding="utf-8")
    print(f"wrote {csv_path} and {txt_path}")
    return 0


def cmd_check(args) -> int:
    ds = data.load_csv(args.data, _schema(args))
    p_value = data.mcar_permutation_test(ds, n_perm=args.n_perm, seed=args.seed)
    verdict = "consistent with" if p_value >= 0.05 else "evidence against"
    print(
        f"permutation p-value: {p_value:.4f} ({verdict} random labeling; "
        f"n={ds.n}, N={ds.n_unlabeled})"
    )
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "estimate": cmd_estimate,
        "simulate": cmd_simulate,
        "check": cmd_check,
    }[args.command]
    try:
        return handler(args)
    except (DegenerateError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (SsCausalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface. Exit codes: 0 success, 1 invalid input, 2 numerical failure."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import analytics, cds, dataio
from .cb_credit import DEFAULT_Q_RANGE, GRADE_GRID_NAMES, select_order
from .errors import CreditCurveError, InvalidInputError, NumericalError, ValidationError
from .gb_curve import GB_GRID_NAMES, fit_attribute_free, fit_gb, theoretical_price
from .gls import DEFAULT_GRID, GridSpec
from .synthetic import SyntheticConfig, generate_synthetic

log = logging.getLogger("creditcurve")


def _grid(arg: str | None, names) -> GridSpec | None:
    """``default``, a comma list applied to every axis, or a JSON file of axis -> values."""
    if arg is None or arg == "default":
        return None
    if Path(arg).is_file():
        spec = dataio.load_config(arg)
        refine = int(spec.pop("refine_depth", 0))
        values = {n: spec.get(n, DEFAULT_GRID) for n in names}
        return GridSpec(values, refine_depth=refine)
    try:
        vals = [float(v) for v in arg.split(",")]
    except ValueError:
        raise ValidationError(f"cannot read grid {arg!r}") from None
    return GridSpec({n: vals for n in names})


def _range(arg: str, what: str) -> tuple[float, float, float | None]:
    parts = arg.split(":")
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        raise ValidationError(f"bad {what} {arg!r}") from None
    if len(nums) == 2:
        return nums[0], nums[1], None
    if len(nums) == 3:
        return nums[0], nums[1], nums[2]
    raise ValidationError(f"bad {what} {arg!r}; expected start:stop[:step]")


def _q_range(arg: str) -> tuple[int, ...]:
    lo, hi, step = _range(arg, "q range")
    if lo != int(lo) or hi != int(hi) or hi < lo:
        raise ValidationError(f"bad q range {arg!r}")
    return tuple(range(int(lo), int(hi) + 1, int(step or 1)))


def _s_grid(arg: str) -> np.ndarray:
    lo, hi, step = _range(arg, "time grid")
    if step is None or not step > 0 or hi < lo or lo < 0:
        raise ValidationError(f"bad time grid {arg!r}; expected start:stop:step with step > 0")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def _emit(obj, out: Path | None = None):
    text = json.dumps(obj, indent=2)
    print(text)
    if out is not None:
        out.write_text(text + "\n")


def cmd_fit_gb(args) -> int:
    ds = dataio.load_market_data(gb_path=args.input, config_path=args.config)
    grid = _grid(args.grid, GB_GRID_NAMES)
    fit = fit_attribute_free if args.attribute_free else fit_gb
    model = fit(ds.gov_bonds, args.order, grid, objective=args.objective)
    dataio.save_gb_model(model, args.out)
    c = model.covariance
    _emit({"order": model.order, "attributes": list(model.attributes), "residual_std": model.residual_std,
           "theta": c.theta, "rho": c.rho, "xi": c.xi, "sigma2": c.sigma2, "out": str(args.out)})
    return 0


def cmd_fit_cb(args) -> int:
    gb = dataio.load_gb_model(args.gb_model)
    ds = dataio.load_market_data(cb_path=args.cb, sales_path=args.sales, config_path=args.config)
    if not ds.corp_bonds:
        raise ValidationError("no corporate bonds to fit")
    grid = _grid(args.grid, GRADE_GRID_NAMES)
    fit = select_order(ds.corp_bonds, gb, _q_range(args.q_range), grid, objective=args.objective)
    dataio.save_credit_fit(fit, args.out, ds, gb)
    _emit({
        "order": fit.order,
        "gamma": dict(zip(ds.ratings, fit.recovery.gamma.tolist())),
        "residual_std": {ds.ratings[i - 1]: v for i, v in fit.residual_std.items()},
        "selection_trace": [{"q": q, "bic": b, "nll": n} for q, b, n in fit.selection_trace],
        "flags": list(fit.flags),
        "out": str(args.out),
    })
    return 0


def _load_fit(path):
    fit, ds, gb = dataio.load_credit_fit(path)
    if ds is None:
        raise ValidationError(f"{path} carries no bond data")
    return fit, ds, gb


def cmd_tsdp(args) -> int:
    fit, ds, _ = _load_fit(args.fit)
    grade = ds.grade_index(args.grade)
    industry = ds.industry_index(args.industry) + 1
    curve = analytics.implied_tsdp_curve(fit, grade, industry, _s_grid(args.grid))
    rows = [(repr(float(s)), repr(float(p))) for s, p in zip(curve.s, curve.p)]
    if args.out:
        dataio._write_csv(args.out, ("s", "p"), rows)
    else:
        for r in rows:
            print(",".join(r))
    print(f"grade {ds.ratings[grade - 1]} industry {ds.industries[industry - 1]}: "
          f"recovery rate {curve.gamma}, {len(rows)} points", file=sys.stderr)
    return 0


def cmd_spread(args) -> int:
    fit, ds, gb = _load_fit(args.fit)
    if args.gb_model:
        gb = dataio.load_gb_model(args.gb_model)
    if gb is None:
        raise ValidationError("no government curve: pass --gb-model")
    bond = ds.corp_bond(args.bond_id)
    p_hat = theoretical_price(gb, bond.schedule, bond.attributes)
    y_hat, _ = analytics.credit_discount(fit, bond, gb)
    _emit({"bond_id": bond.id, "theoretical_price": p_hat, "credit_discount": y_hat,
           "model_price": p_hat + y_hat, "market_price": bond.price,
           "fair_spread": analytics.fair_spread(fit, bond, gb)})
    return 0


def cmd_portfolio(args) -> int:
    fit, ds, gb = _load_fit(args.fit)
    if args.gb_model:
        gb = dataio.load_gb_model(args.gb_model)
    if gb is None:
        raise ValidationError("no government curve: pass --gb-model")
    positions = [analytics.PortfolioPosition(b, u) for b, u in dataio.load_positions(args.positions, ds)]
    dec = analytics.portfolio_decompose(positions, fit, gb, allow_short=args.allow_short)

    def col(w, m):
        return "" if w is None else repr(float(w[m]))

    rows = [(repr(float(s)), repr(float(dec.A[m])), repr(float(dec.B[m])), repr(float(dec.C[m])),
             col(dec.a, m), col(dec.b, m), col(dec.c, m)) for m, s in enumerate(dec.combined_times)]
    dataio._write_csv(args.out, ("s", "A", "B", "C", "a", "b", "c"), rows)
    inflow, loss, actual = dec.durations
    A, B, C = dec.totals
    _emit({"A": A, "B": B, "C": C, "duration_inflow": inflow, "duration_loss": loss,
           "duration_actual": actual, "flags": list(dec.flags), "out": str(args.out)})
    return 0


def cmd_cds(args) -> int:
    fit, ds, _ = _load_fit(args.fit)
    disc_model = dataio.load_gb_model(args.discount)
    if not disc_model.attribute_free:
        raise ValidationError("--discount must be an attribute-free government curve (fit-gb --attribute-free)")
    issuer = ds.issuer(args.issuer)
    contract = cds.CdsContract.regular(args.horizon_years, args.freq, issuer.grade, issuer.portfolio,
                                       pay_lag_days=args.pay_lag, recovery_lag_days=args.recovery_lag)
    curve = cds.default_curve(fit, issuer.portfolio, issuer.grade, contract.horizon_days)
    disc = cds.DiscountGrid.from_model(disc_model, contract.horizon_days + contract.max_lag)
    gamma = fit.recovery[issuer.grade]
    x = cds.cds_premium(contract, curve, disc, gamma)
    out = {"issuer": args.issuer, "grade": ds.ratings[issuer.grade - 1], "recovery_rate": gamma,
           "premium_per_payment": x, "premium_annualized": cds.annualized(x, args.freq),
           "premium_times_days": list(contract.premium_times), "flags": list(curve.flags)}
    if args.mc_paths:
        xm = cds.mc_premium(contract, curve, disc, gamma, args.mc_paths, args.seed)
        out.update({"mc_premium_per_payment": xm, "mc_paths": args.mc_paths, "seed": args.seed})
    _emit(out)
    return 0


def cmd_synth(args) -> int:
    cfg = SyntheticConfig.from_dict(dataio.load_config(args.config))
    ds = generate_synthetic(cfg)
    paths = dataio.write_market_data(ds, args.out_dir)
    _emit({name: str(p) for name, p in paths.items()})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="creditcurve", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-gb", help="fit the government discount curve")
    s.add_argument("--input", required=True)
    s.add_argument("--config")
    s.add_argument("--order", type=int, default=2)
    s.add_argument("--grid", default="default")
    s.add_argument("--objective", choices=("nll", "psi"), default="nll")
    s.add_argument("--attribute-free", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_gb)

    s = sub.add_parser("fit-cb", help="fit default probability curves and recovery rates")
    s.add_argument("--gb-model", required=True)
    s.add_argument("--cb", required=True)
    s.add_argument("--sales", required=True)
    s.add_argument("--config")
    s.add_argument("--q-range", default=f"{DEFAULT_Q_RANGE[0]}:{DEFAULT_Q_RANGE[-1]}")
    s.add_argument("--grid", default="default")
    s.add_argument("--objective", choices=("nll", "psi"), default="nll")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_cb)

    s = sub.add_parser("tsdp", help="sample a generic default probability curve")
    s.add_argument("--fit", required=True)
    s.add_argument("--grade", required=True)
    s.add_argument("--industry", required=True)
    s.add_argument("--grid", default="0:10:0.25")
    s.add_argument("--out")
    s.set_defaults(func=cmd_tsdp)

    s = sub.add_parser("spread", help="fair spread of one corporate bond")
    s.add_argument("--fit", required=True)
    s.add_argument("--gb-model")
    s.add_argument("--bond-id", required=True)
    s.set_defaults(func=cmd_spread)

    s = sub.add_parser("portfolio", help="inflow / loss decomposition of a bond portfolio")
    s.add_argument("--fit", required=True)
    s.add_argument("--gb-model")
    s.add_argument("--positions", required=True)
    s.add_argument("--allow-short", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_portfolio)

    s = sub.add_parser("cds", help="fair CDS premium on an issuer")
    s.add_argument("--fit", required=True)
    s.add_argument("--discount", required=True)
    s.add_argument("--issuer", required=True)
    s.add_argument("--horizon-years", type=float, default=5.0)
    s.add_argument("--freq", type=int, default=2)
    s.add_argument("--mc-paths", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pay-lag", type=int, default=0)
    s.add_argument("--recovery-lag", type=int, default=0)
    s.set_defaults(func=cmd_cds)

    s = sub.add_parser("synth", help="generate a synthetic market")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InvalidInputError, CreditCurveError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

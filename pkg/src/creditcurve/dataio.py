"""CSV market data and JSON model files.

Formats (all CSV files carry a header row):

* ``gb.csv``: ``id,price,coupon,maturity``
* ``cb.csv``: ``id,price,coupon,maturity,grade`` plus an optional ``issuer``
  column (defaults to the bond id)
* ``sales.csv``: ``issuer_id`` then one column per industry
* ``positions.csv``: ``bond_id,units``
* ``config.json``: ``industries``, ``ratings`` (best first), ``frequency``,
  ``valuation_date``; every key optional

Floats are written with ``repr`` so a write/read cycle is exact. Model files
are JSON with a ``schema_version`` field.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .cb_credit import CbCovarianceParams, CreditFit, RecoveryRates, TsdpCoefficients
from .dataset import MarketDataset
from .errors import ParseError, ValidationError
from .gb_curve import DiscountCoefficients, GbCovarianceParams, GbCurveModel
from .instruments import BusinessPortfolio, CorporateBond, GovernmentBond

SCHEMA_VERSION = 1
WEIGHT_TOL = 1e-6
GB_COLUMNS = ("id", "price", "coupon", "maturity")
CB_COLUMNS = ("id", "price", "coupon", "maturity", "grade")


def _num(x) -> str:
    return repr(float(x))


def _read_rows(path, required: Iterable[str]) -> tuple[list[str], list[tuple[int, dict]]]:
    path = str(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = [h.strip() for h in (reader.fieldnames or [])]
            missing = [c for c in required if c not in header]
            if missing:
                raise ParseError(f"missing columns {missing}; header is {header}", path, 1)
            reader.fieldnames = header
            rows = [(reader.line_num, {k: (v or "").strip() for k, v in row.items() if k is not None})
                    for row in reader if any((v or "").strip() for v in row.values() if isinstance(v, str))]
    except FileNotFoundError:
        raise ParseError("file not found", path) from None
    except csv.Error as exc:
        raise ParseError(str(exc), path) from None
    return header, rows


def _float(row: dict, key: str) -> float:
    try:
        v = float(row[key])
    except (KeyError, ValueError):
        raise ValueError(f"{key}={row.get(key)!r} is not a number") from None
    if not math.isfinite(v):
        raise ValueError(f"{key} must be finite")
    return v


class _Errors:
    def __init__(self):
        self.items: list[str] = []

    def add(self, path, line, msg):
        self.items.append(f"{path}:{line}: {msg}")

    def raise_if_any(self, cls=ParseError):
        if self.items:
            raise cls("\n".join(self.items))


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ParseError("file not found", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, str(path), exc.lineno) from None
    if not isinstance(cfg, dict):
        raise ParseError("config must be a JSON object", str(path))
    return cfg


def load_gb_csv(path, frequency: int = 2) -> list[GovernmentBond]:
    _, rows = _read_rows(path, GB_COLUMNS)
    errors, bonds = _Errors(), []
    for line, row in rows:
        try:
            bonds.append(GovernmentBond.from_terms(row["id"], _float(row, "price"), _float(row, "coupon"),
                                                   _float(row, "maturity"), frequency))
        except ValueError as exc:
            errors.add(path, line, exc)
    errors.raise_if_any()
    return bonds


def load_sales_csv(path) -> tuple[tuple, dict[str, BusinessPortfolio]]:
    """Industry names from the header and one portfolio per issuer."""
    header, rows = _read_rows(path, ("issuer_id",))
    industries = tuple(h for h in header if h != "issuer_id")
    if not industries:
        raise ParseError("no industry columns", str(path), 1)
    errors, out = _Errors(), {}
    for line, row in rows:
        issuer = row["issuer_id"]
        try:
            w = np.array([_float(row, j) for j in industries])
        except ValueError as exc:
            errors.add(path, line, f"issuer {issuer}: {exc}")
            continue
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            errors.add(path, line, f"issuer {issuer}: weights sum to {total:.12g}, not 1")
            continue
        if np.any(w < 0):
            errors.add(path, line, f"issuer {issuer}: negative weight")
            continue
        if issuer in out:
            errors.add(path, line, f"issuer {issuer} listed twice")
            continue
        if abs(total - 1.0) > 1e-9:
            w = w / total
        out[issuer] = BusinessPortfolio(w)
    errors.raise_if_any(ValidationError)
    return industries, out


def _ratings_from(labels: list[str]) -> tuple:
    try:
        top = max(int(v) for v in labels) if labels else 0
    except ValueError:
        raise ValidationError("grade labels are not integers; declare the rating order in the config") from None
    return tuple(str(i) for i in range(1, top + 1))


def load_cb_csv(path, ratings: tuple | None, portfolios: dict[str, BusinessPortfolio],
                frequency: int = 2) -> tuple[list[CorporateBond], tuple]:
    header, rows = _read_rows(path, CB_COLUMNS)
    has_issuer = "issuer" in header
    if ratings is None:
        ratings = _ratings_from([row["grade"] for _, row in rows])
    errors, bonds = _Errors(), []
    for line, row in rows:
        issuer = row["issuer"] if has_issuer and row.get("issuer") else row["id"]
        label = row["grade"]
        if label in ratings:
            grade = ratings.index(label) + 1
        else:
            try:
                grade = int(label)
            except ValueError:
                errors.add(path, line, f"unknown rating {label!r}")
                continue
            if not 1 <= grade <= len(ratings):
                errors.add(path, line, f"rating index {grade} outside 1..{len(ratings)}")
                continue
        if issuer not in portfolios:
            errors.add(path, line, f"issuer {issuer} has no sales row")
            continue
        try:
            bonds.append(CorporateBond.from_terms(
                row["id"], _float(row, "price"), _float(row, "coupon"), _float(row, "maturity"),
                grade, portfolios[issuer], frequency, issuer))
        except ValueError as exc:
            errors.add(path, line, exc)
    errors.raise_if_any()
    return bonds, tuple(ratings)


def load_market_data(gb_path=None, cb_path=None, sales_path=None, config_path=None) -> MarketDataset:
    """Read and validate a market; any of the files may be omitted."""
    cfg = load_config(config_path)
    frequency = int(cfg.get("frequency", 2))
    gov = load_gb_csv(gb_path, frequency) if gb_path is not None else []
    industries = tuple(cfg.get("industries", ()))
    portfolios: dict[str, BusinessPortfolio] = {}
    if sales_path is not None:
        sales_industries, portfolios = load_sales_csv(sales_path)
        if industries and industries != sales_industries:
            raise ValidationError(f"sales columns {list(sales_industries)} differ from configured {list(industries)}")
        industries = sales_industries
    ratings = tuple(cfg["ratings"]) if "ratings" in cfg else None
    corp: list[CorporateBond] = []
    if cb_path is not None:
        if sales_path is None:
            raise ValidationError("corporate bonds need a sales file")
        corp, ratings = load_cb_csv(cb_path, ratings, portfolios, frequency)
    return MarketDataset(gov, corp, industries, ratings or (), cfg.get("valuation_date", ""), frequency)


def load_positions(path, dataset: MarketDataset) -> list[tuple[CorporateBond, float]]:
    _, rows = _read_rows(path, ("bond_id", "units"))
    errors, out = _Errors(), []
    ids = {b.id: b for b in dataset.corp_bonds}
    for line, row in rows:
        if row["bond_id"] not in ids:
            errors.add(path, line, f"unknown bond {row['bond_id']!r}")
            continue
        try:
            out.append((ids[row["bond_id"]], _float(row, "units")))
        except ValueError as exc:
            errors.add(path, line, exc)
    errors.raise_if_any()
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_market_data(dataset: MarketDataset, out_dir) -> dict[str, Path]:
    """Write gb.csv, cb.csv, sales.csv and config.json (plus truth.json when known)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in ("gb.csv", "cb.csv", "sales.csv", "config.json")}
    _write_csv(paths["gb.csv"], GB_COLUMNS, [
        (b.id, _num(b.price), _num(b.attributes.coupon_rate), _num(b.attributes.maturity)) for b in dataset.gov_bonds])
    _write_csv(paths["cb.csv"], CB_COLUMNS + ("issuer",), [
        (b.id, _num(b.price), _num(b.attributes.coupon_rate), _num(b.attributes.maturity),
         dataset.ratings[b.grade - 1], b.issuer) for b in dataset.corp_bonds])
    issuers = {}
    for b in dataset.corp_bonds:
        issuers.setdefault(b.issuer, b.portfolio)
    _write_csv(paths["sales.csv"], ("issuer_id",) + dataset.industries,
               [(k,) + tuple(_num(v) for v in p.weights) for k, p in issuers.items()])
    config = {"industries": list(dataset.industries), "ratings": list(dataset.ratings),
              "frequency": dataset.frequency, "valuation_date": dataset.valuation_date}
    if dataset.metadata:
        config["metadata"] = dataset.metadata
    _dump(paths["config.json"], config)
    if dataset.truth is not None:
        paths["truth.json"] = out / "truth.json"
        _dump(paths["truth.json"], dataset.truth)
    return paths


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _load_json(path, kind: str) -> dict:
    d = load_config(path)
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"{path}: unsupported schema_version {d.get('schema_version')!r}")
    if d.get("kind") != kind:
        raise ValidationError(f"{path}: expected a {kind} file, got {d.get('kind')!r}")
    return d


def gb_model_to_dict(m: GbCurveModel) -> dict:
    c = m.covariance
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "gb_model",
        "coefficients": m.coefficients.coefficients.tolist(),
        "attributes": list(m.attributes),
        "covariance": {"sigma2": c.sigma2, "theta": c.theta, "rho": c.rho, "xi": c.xi},
        "residuals": m.residuals.tolist(),
        "residual_std": m.residual_std,
        "objective": m.objective,
        "coef_covariance": m.coef_covariance.tolist(),
        "bond_ids": list(m.bond_ids),
        "objective_mode": m.objective_mode,
        "max_maturity": m.max_maturity,
    }


def gb_model_from_dict(d: dict) -> GbCurveModel:
    try:
        return GbCurveModel(
            coefficients=DiscountCoefficients(np.array(d["coefficients"], dtype=float)),
            covariance=GbCovarianceParams(**d["covariance"]),
            residuals=np.array(d["residuals"], dtype=float),
            residual_std=d["residual_std"],
            objective=d["objective"],
            coef_covariance=np.array(d["coef_covariance"], dtype=float),
            attributes=tuple(d["attributes"]),
            bond_ids=tuple(d["bond_ids"]),
            objective_mode=d["objective_mode"],
            max_maturity=d["max_maturity"],
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed government curve model: {exc}") from None


def save_gb_model(m: GbCurveModel, path):
    _dump(path, gb_model_to_dict(m))


def load_gb_model(path) -> GbCurveModel:
    return gb_model_from_dict(_load_json(path, "gb_model"))


def _bond_record(b: CorporateBond) -> dict:
    return {"id": b.id, "price": b.price, "coupon": b.attributes.coupon_rate, "maturity": b.attributes.maturity,
            "grade": b.grade, "issuer": b.issuer}


def credit_fit_to_dict(fit: CreditFit, dataset: MarketDataset | None = None, gb: GbCurveModel | None = None) -> dict:
    c = fit.covariance
    d = {
        "schema_version": SCHEMA_VERSION,
        "kind": "credit_fit",
        "alpha": fit.tsdp.alpha.tolist(),
        "gamma": fit.recovery.gamma.tolist(),
        "covariance": {"sigma2": c.sigma2, "theta": c.theta, "rho": c.rho.tolist(), "xi": c.xi.tolist()},
        "residuals": {str(i): r.tolist() for i, r in fit.residuals.items()},
        "residual_std": {str(i): v for i, v in fit.residual_std.items()},
        "objective": fit.objective,
        "criterion": fit.criterion,
        "coef_covariance": fit.coef_covariance.tolist(),
        "bond_ids": {str(i): list(v) for i, v in fit.bond_ids.items()},
        "selection_trace": [list(t) for t in fit.selection_trace],
        "flags": list(fit.flags),
        "maturity_span": {str(i): v for i, v in fit.maturity_span.items()},
    }
    if dataset is not None:
        issuers = {}
        for b in dataset.corp_bonds:
            issuers.setdefault(b.issuer, b.portfolio.weights.tolist())
        d["dataset"] = {
            "industries": list(dataset.industries), "ratings": list(dataset.ratings),
            "frequency": dataset.frequency, "valuation_date": dataset.valuation_date,
            "bonds": [_bond_record(b) for b in dataset.corp_bonds], "issuers": issuers,
        }
    if gb is not None:
        d["gb_model"] = gb_model_to_dict(gb)
    return d


def credit_fit_from_dict(d: dict) -> CreditFit:
    try:
        c = d["covariance"]
        return CreditFit(
            tsdp=TsdpCoefficients(np.array(d["alpha"], dtype=float)),
            recovery=RecoveryRates(np.array(d["gamma"], dtype=float)),
            covariance=CbCovarianceParams(c["sigma2"], c["theta"], np.array(c["rho"]), np.array(c["xi"])),
            residuals={int(i): np.array(r, dtype=float) for i, r in d["residuals"].items()},
            residual_std={int(i): v for i, v in d["residual_std"].items()},
            objective=d["objective"],
            criterion=d["criterion"],
            coef_covariance=np.array(d["coef_covariance"], dtype=float),
            bond_ids={int(i): tuple(v) for i, v in d["bond_ids"].items()},
            selection_trace=tuple(tuple(t) for t in d["selection_trace"]),
            flags=tuple(d["flags"]),
            maturity_span={int(i): v for i, v in d["maturity_span"].items()},
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise ValidationError(f"malformed credit fit: {exc}") from None


def dataset_from_fit_dict(d: dict) -> MarketDataset:
    if "dataset" not in d:
        raise ValidationError("credit fit file carries no bond data")
    ds = d["dataset"]
    f = ds["frequency"]
    portfolios = {k: BusinessPortfolio(np.array(w, dtype=float)) for k, w in ds["issuers"].items()}
    bonds = [CorporateBond.from_terms(b["id"], b["price"], b["coupon"], b["maturity"], b["grade"],
                                      portfolios[b["issuer"]], f, b["issuer"]) for b in ds["bonds"]]
    return MarketDataset([], bonds, ds["industries"], ds["ratings"], ds.get("valuation_date", ""), f)


def save_credit_fit(fit: CreditFit, path, dataset: MarketDataset | None = None, gb: GbCurveModel | None = None):
    _dump(path, credit_fit_to_dict(fit, dataset, gb))


def load_credit_fit(path) -> tuple[CreditFit, MarketDataset | None, GbCurveModel | None]:
    d = _load_json(path, "credit_fit")
    dataset = dataset_from_fit_dict(d) if "dataset" in d else None
    gb = gb_model_from_dict(d["gb_model"]) if "gb_model" in d else None
    return credit_fit_from_dict(d), dataset, gb

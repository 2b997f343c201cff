"""Batch command line: samples or DGP presets in, bounds, policies, regret
reports, learned rules, and replication tables out.

Exit codes: 0 ok, 2 input error, 3 unsupported assumption, 4 inconsistency
between provided pieces, 5 learner error. All randomness flows from --seed;
outputs are plain CSV and JSON written under --out with canonical ordering,
so a rerun with the same inputs is byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bounds import (
    DEFAULT_K,
    DEFAULT_T_POINTS,
    AssumptionSet,
    DeltaCdfBounds,
    QoteBounds,
    coupling_lp_bounds,
    default_t_grid,
    delta_bounds_to_csv,
    invert_bounds,
    rank_invariance_qote,
    symmetry_median_qote,
)
from .marginals import QuantileCurve, Sample, make_y_grid, read_sample_csv, u_grid
from .owl import (
    TrainConfig,
    cells_from_bound_field,
    decision_function_to_json,
    predict_policy,
    surrogate_regret,
    train_owl,
)
from .policy import (
    BoundField,
    PolicyField,
    derive_policy,
    max_regret,
    policy_to_json,
    regret_report_to_json,
)
from .sim import (
    SUBGROUPS,
    DgpSpec,
    classification_experiment,
    draw_sample,
    regret_experiment,
)

MAX_CELLS = 200

ASSUMPTION_FLAGS = {
    "none": "NoAssumption",
    "si": "SI",
    "pqd": "PQD",
    "ri": "RankInvariance",
    "sy": "Symmetry",
}

RULES = ("mmr_stochastic", "mmr_deterministic", "maximin")


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _resolve_assumption(flag: str) -> str:
    tag = ASSUMPTION_FLAGS.get(flag.lower())
    if tag is None:
        raise _CliError(3, f"assumption {flag} not supported")
    return tag


def _resolve_dgp(value: str) -> DgpSpec:
    m = re.fullmatch(r"subgroup([1-8])", value.lower())
    if m:
        return SUBGROUPS[int(m.group(1))]
    if os.path.exists(value):
        try:
            with open(value) as fh:
                data = json.load(fh)
            return DgpSpec(
                mu1=float(data["mu1"]),
                mu0=float(data["mu0"]),
                var1=float(data["var1"]),
                var0=float(data["var0"]),
                rho=float(data["rho"]),
                lognormal=bool(data.get("lognormal", False)),
                p_treat=float(data.get("p_treat", 0.5)),
            )
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise _CliError(2, f"bad DGP file {value}: {exc}")
    raise _CliError(2, f"unknown DGP {value!r} (preset subgroup1..8 or JSON path)")


def _parse_taus(text: str) -> List[float]:
    taus = []
    for part in text.split(","):
        try:
            tau = float(part)
        except ValueError:
            raise _CliError(2, f"bad tau {part!r}")
        if not 0 < tau < 1:
            raise _CliError(2, f"tau {tau} outside (0, 1)")
        taus.append(tau)
    return taus


def _cells_from_sample(sample: Sample) -> List[Tuple[Tuple[float, ...], float, Sample]]:
    """Split a sample into covariate cells (x, weight, cell sample)."""
    if sample.p == 0:
        return [((), 1.0, sample)]
    rows = np.asarray(sample.x)
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    if uniq.shape[0] > MAX_CELLS:
        raise _CliError(
            2,
            f"{uniq.shape[0]} distinct covariate rows exceed the {MAX_CELLS}-cell "
            "limit; bin the covariates first",
        )
    cells = []
    for idx in range(uniq.shape[0]):
        mask = inverse == idx
        cells.append(
            (
                tuple(float(v) for v in uniq[idx]),
                float(np.mean(mask)),
                Sample(y=sample.y[mask], d=sample.d[mask], x=rows[mask]),
            )
        )
    return cells


def _arm_values(cell: Sample, x, k: int) -> Tuple[np.ndarray, np.ndarray]:
    y1 = cell.y[cell.d == 1]
    y0 = cell.y[cell.d == 0]
    if y1.size == 0 or y0.size == 0:
        raise _CliError(2, f"cell {list(x)} lacks observations in one arm")
    return make_y_grid(y1, k), make_y_grid(y0, k)


def _load_cells(args) -> List[Tuple[Tuple[float, ...], float, Sample]]:
    if args.input:
        try:
            sample = read_sample_csv(args.input)
        except (OSError, ValueError) as exc:
            raise _CliError(2, f"bad input CSV {args.input}: {exc}")
        return _cells_from_sample(sample)
    if args.dgp:
        dgp = _resolve_dgp(args.dgp)
        return [((), 1.0, draw_sample(dgp, args.n, (args.seed, 0)))]
    raise _CliError(2, "provide --input CSV or --dgp")


def _cell_bounds(v1, v0, tau: float, tag: str, tgrid_points: int):
    """(QoteBounds, DeltaCdfBounds or None) for one cell."""
    k = v1.size
    q1 = QuantileCurve(u_grid(k), v1)
    q0 = QuantileCurve(u_grid(k), v0)
    if tag == "RankInvariance":
        point = rank_invariance_qote(q1, q0, tau)
        diffs = np.sort(v1 - v0)
        grid = default_t_grid(v1, v0, tgrid_points)
        cdf = np.searchsorted(diffs, grid, side="right") / k
        env = DeltaCdfBounds(t_grid=grid, lower=cdf, upper=cdf)
        return QoteBounds(lower=point, upper=point), env
    if tag == "Symmetry":
        if abs(tau - 0.5) > 1e-12:
            raise _CliError(2, "symmetry identifies the median only; use --tau 0.5")
        point = symmetry_median_qote(float(np.mean(v1) - np.mean(v0)))
        return QoteBounds(lower=point, upper=point), None
    grid = default_t_grid(v1, v0, tgrid_points)
    env = coupling_lp_bounds(q1, q0, AssumptionSet(tag), t_grid=grid, k=k)
    return invert_bounds(env, tau), env


def _bounds_payload(args, tau: float, tag: str) -> Tuple[dict, List]:
    cells = _load_cells(args)
    out_cells = []
    envelopes = []
    for x, w, cell in cells:
        v1, v0 = _arm_values(cell, x, args.k)
        b, env = _cell_bounds(v1, v0, tau, tag, args.tgrid)
        out_cells.append(
            {
                "x": list(x),
                "weight": w,
                "lower": b.lower,
                "upper": b.upper,
                "truncated_lower": b.truncated_lower,
                "truncated_upper": b.truncated_upper,
            }
        )
        envelopes.append(env)
    payload = {
        "tau": tau,
        "assumption": tag,
        "k": args.k,
        "cells": out_cells,
    }
    return payload, envelopes


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _json_text(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def cmd_bounds(args) -> int:
    tag = _resolve_assumption(args.assumption)
    for tau in _parse_taus(args.tau):
        payload, envelopes = _bounds_payload(args, tau, tag)
        _write(os.path.join(args.out, f"bounds_tau{tau:g}.json"), _json_text(payload))
        for i, env in enumerate(envelopes):
            if env is None:
                continue
            _write(
                os.path.join(args.out, f"envelope_tau{tau:g}_cell{i}.csv"),
                delta_bounds_to_csv(env),
            )
    return 0


def _field_from_payload(payload: dict) -> BoundField:
    cells = tuple(
        (
            tuple(c["x"]),
            c["weight"],
            QoteBounds(
                lower=c["lower"],
                upper=c["upper"],
                truncated_lower=c.get("truncated_lower", False),
                truncated_upper=c.get("truncated_upper", False),
            ),
        )
        for c in payload["cells"]
    )
    return BoundField(cells)


def _apply_weights_file(field: BoundField, path: str) -> BoundField:
    try:
        raw = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    except (OSError, ValueError) as exc:
        raise _CliError(2, f"bad weights CSV {path}: {exc}")
    raw = np.atleast_1d(raw)
    names = list(raw.dtype.names or ())
    if not names or names[-1] != "weight":
        raise _CliError(2, "weights CSV needs covariate columns then 'weight'")
    given: Dict[Tuple[float, ...], float] = {}
    for row in raw:
        x = tuple(float(row[n]) for n in names[:-1])
        given[x] = float(row["weight"])
    points = field.points()
    if set(given) != set(points):
        raise _CliError(4, "weights CSV cells do not match the bounds cells")
    cells = tuple((x, given[x], b) for (x, _, b) in field.cells)
    return BoundField(cells)


def cmd_policy(args) -> int:
    for tau in _parse_taus(args.tau):
        if args.input and args.input.endswith(".json"):
            try:
                with open(args.input) as fh:
                    payload = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise _CliError(2, f"bad bounds JSON {args.input}: {exc}")
            if abs(payload.get("tau", tau) - tau) > 1e-12:
                raise _CliError(4, f"bounds file is for tau={payload.get('tau')}")
        else:
            tag = _resolve_assumption(args.assumption)
            payload, _ = _bounds_payload(args, tau, tag)
        field = _field_from_payload(payload)
        if args.weights:
            field = _apply_weights_file(field, args.weights)
        reports = {}
        for rule in RULES:
            policy = derive_policy(field, rule)
            _write(
                os.path.join(args.out, f"policy_{rule}_tau{tau:g}.json"),
                policy_to_json(policy),
            )
            reports[rule] = json.loads(regret_report_to_json(max_regret(policy, field)))
        _write(os.path.join(args.out, f"regret_tau{tau:g}.json"), _json_text(reports))
    return 0


def cmd_simulate(args) -> int:
    if not args.dgp:
        raise _CliError(2, "simulate needs --dgp")
    dgp = _resolve_dgp(args.dgp)
    for tau in _parse_taus(args.tau):
        rates = classification_experiment(
            dgp, tau, args.n, args.reps, seed=args.seed, k=args.k
        )
        regrets = regret_experiment(dgp, tau, args.n, args.reps, seed=args.seed, k=args.k)
        _write(
            os.path.join(args.out, f"classification_tau{tau:g}.csv"), rates.to_csv()
        )
        _write(os.path.join(args.out, f"regret_tau{tau:g}.csv"), regrets.to_csv())
    return 0


def _parse_subgroups(text: str) -> List[int]:
    out = []
    for part in text.split(","):
        try:
            sg = int(part)
        except ValueError:
            raise _CliError(2, f"bad subgroup {part!r}")
        if sg not in SUBGROUPS:
            raise _CliError(2, f"no subgroup {sg}")
        out.append(sg)
    return out


def cmd_tables(args) -> int:
    subgroups = _parse_subgroups(args.subgroups)
    for tau in _parse_taus(args.tau):
        class_lines = ["subgroup,estimator,criterion,rate"]
        regret_lines = ["subgroup,estimator,criterion,rate"]
        for sg in subgroups:
            dgp = SUBGROUPS[sg]
            rates = classification_experiment(
                dgp, tau, args.n, args.reps, seed=args.seed, k=args.k
            )
            regrets = regret_experiment(
                dgp, tau, args.n, args.reps, seed=args.seed, k=args.k
            )
            for est, crit, v in rates.rows:
                class_lines.append(f"{sg},{est},{crit},{v:.6f}")
            for est, crit, v in regrets.rows:
                regret_lines.append(f"{sg},{est},{crit},{v:.6f}")
        _write(
            os.path.join(args.out, f"tables_classification_tau{tau:g}.csv"),
            "\n".join(class_lines) + "\n",
        )
        _write(
            os.path.join(args.out, f"tables_regret_tau{tau:g}.csv"),
            "\n".join(regret_lines) + "\n",
        )
    return 0


def cmd_owl(args) -> int:
    if not args.input or not args.input.endswith(".json"):
        raise _CliError(2, "owl needs --input pointing at a bounds JSON file")
    try:
        with open(args.input) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _CliError(2, f"bad bounds JSON {args.input}: {exc}")
    field = _field_from_payload(payload)
    cells = cells_from_bound_field(field)
    config = TrainConfig(
        lam=args.lam, sigma=args.sigma, max_epochs=args.max_epochs, seed=args.seed
    )
    try:
        f, trace = train_owl(cells, config)
    except ValueError as exc:
        if "nothing to learn" in str(exc):
            raise _CliError(5, str(exc))
        raise
    xs = np.array([list(x) for x, _, _ in cells])
    policy = predict_policy(f, xs)
    labels = np.array([lab for _, _, lab in cells])
    weights = np.array([w for _, w, _ in cells])
    preds = np.where(f(xs) >= 0, 1.0, -1.0)
    miscls = int(np.sum((preds != labels) & (weights > 0)))
    report = {
        "surrogate_regret": surrogate_regret(f, field),
        "training_misclassifications": miscls,
        "epochs": len(trace),
        "final_objective": float(trace[-1]),
    }
    _write(os.path.join(args.out, "owl_model.json"), decision_function_to_json(f))
    _write(os.path.join(args.out, "owl_policy.json"), policy_to_json(policy))
    _write(os.path.join(args.out, "owl_report.json"), _json_text(report))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qotepolicy",
        description="Bounds on quantiles of treatment effects and the "
        "treatment rules they support.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, dgp=True):
        p.add_argument("--input", help="input CSV (y,d,x1..xp) or JSON file")
        if dgp:
            p.add_argument("--dgp", help="DGP preset subgroup1..8 or JSON path")
        p.add_argument("--tau", default="0.25", help="comma-separated levels")
        p.add_argument("--k", type=int, default=DEFAULT_K)
        p.add_argument("--tgrid", type=int, default=DEFAULT_T_POINTS)
        p.add_argument("--n", type=int, default=1000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".")

    p_bounds = sub.add_parser("bounds", help="per-cell quantile bounds")
    common(p_bounds)
    p_bounds.add_argument("--assumption", default="none")
    p_bounds.set_defaults(func=cmd_bounds)

    p_policy = sub.add_parser("policy", help="minimax rules and regret report")
    common(p_policy)
    p_policy.add_argument("--assumption", default="none")
    p_policy.add_argument("--weights", help="CSV overriding cell weights")
    p_policy.set_defaults(func=cmd_policy)

    p_sim = sub.add_parser("simulate", help="classification and regret tables")
    common(p_sim)
    p_sim.add_argument("--reps", type=int, default=200)
    p_sim.set_defaults(func=cmd_simulate)

    p_tables = sub.add_parser("tables", help="full replication table preset")
    common(p_tables)
    p_tables.add_argument("--reps", type=int, default=200)
    p_tables.add_argument("--subgroups", default="1,2,3,4,5,6,7,8")
    p_tables.set_defaults(func=cmd_tables)

    p_owl = sub.add_parser("owl", help="learn a rule from a bounds file")
    common(p_owl, dgp=False)
    p_owl.add_argument("--lam", type=float, default=None)
    p_owl.add_argument("--sigma", type=float, default=None)
    p_owl.add_argument("--max-epochs", type=int, default=2000)
    p_owl.set_defaults(func=cmd_owl)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

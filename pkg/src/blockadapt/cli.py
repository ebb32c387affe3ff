"""Command-line entry point: ``blockadapt {constants,kfun,partition,converge,verify}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import bench
from .adapt import SpecError, build_adaptive, partition_for_budget, uniform_partition
from .blocks import Block
from .kfun import (HomogeneousPoly, KFunError, c_even, c_odd, closed_form_applicable,
                   k_closed_form, k_modified, k_numeric, k_star, signature)
from .norms import GRID_POINTS, QUAD_ORDER, parse_p
from .poly import Polynomial
from .proj import OperatorError, check_hypotheses, detect_k, operator_norm_estimate, parse_operator

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    operator: str = "lagrange:equispaced:k=1:d=2"
    function: str = "quad_aniso"
    p: str = "inf"
    domain: dict | None = None
    kind: str = "uniform"
    budgets: list | None = None
    M: float | None = None
    weight: str | None = None
    quad_order: int = QUAD_ORDER
    grid_points: int = GRID_POINTS
    out: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def validate(self) -> None:
        try:
            parse_p(self.p)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.p = str(self.p)
        if self.kind not in {k.value for k in bench.Kind}:
            raise ConfigError(f"unknown partition kind {self.kind!r}")
        if self.budgets is not None:
            if not all(isinstance(b, int) and b > 0 for b in self.budgets):
                raise ConfigError("budgets must be positive integers")
        if self.domain is not None and set(self.domain) != {"lo", "hi"}:
            raise ConfigError("domain must have exactly the keys 'lo' and 'hi'")
        if self.weight is not None and self.weight not in bench.WEIGHTS:
            raise ConfigError(f"unknown weight {self.weight!r}; known: {sorted(bench.WEIGHTS)}")
        if self.quad_order < 1 or self.grid_points < 2:
            raise ConfigError("quad_order must be >= 1 and grid_points >= 2")

    # resolved objects
    def op(self):
        return parse_operator(self.operator)

    def func(self) -> bench.CorpusFunction:
        try:
            f = bench.get_function(self.function)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        if self.domain is not None:
            f = replace(f, domain=Block(tuple(self.domain["lo"]), tuple(self.domain["hi"])))
        if self.weight is not None:
            f = f.with_weight(None if self.weight == "one" else bench.WEIGHTS[self.weight])
        return f


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8", newline="\n")


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _g(v: float) -> str:
    return f"{v:.17g}"


def parse_poly(text: str, d: int) -> Polynomial:
    """Terms ``coef:e1,e2,...`` separated by ``;``, e.g. ``1:2,0;4:0,2``."""
    terms = {}
    for item in filter(None, (s.strip() for s in text.split(";"))):
        try:
            coef, exps = item.split(":")
            alpha = tuple(int(e) for e in exps.split(","))
            terms[alpha] = terms.get(alpha, 0.0) + float(coef)
        except ValueError:
            raise ConfigError(f"bad polynomial term {item!r} (expected coef:e1,...,ed)") from None
        if len(alpha) != d:
            raise ConfigError(f"term {item!r} has {len(alpha)} exponents, operator has d={d}")
    return Polynomial(d, terms)


# subcommands

def cmd_constants(args, cfg: ExperimentConfig) -> int:
    op = cfg.op()
    p = parse_p(cfg.p)
    m = detect_k(op) + 1
    rows = [["constant", "value"]]
    label = "inf" if p == math.inf else f"{p:g}"
    if m % 2:
        rows.append([f"C({label})", _g(c_odd(op, p, cfg.quad_order, cfg.grid_points))])
    else:
        for s in range(op.d + 1):
            rows.append([f"C({label},{s})", _g(c_even(op, p, s, cfg.quad_order, cfg.grid_points))])
    _write(_csv(rows), cfg.out)
    return EXIT_OK


def cmd_kfun(args, cfg: ExperimentConfig) -> int:
    op = cfg.op()
    pi = HomogeneousPoly(parse_poly(args.poly, op.d))
    p = parse_p(cfg.p)
    kw = dict(q=cfg.quad_order, grid_points=cfg.grid_points)
    if cfg.M is not None:
        res = k_modified(op, pi, p, cfg.M, **kw)
    elif args.method == "closed-form" or (args.method == "auto" and closed_form_applicable(op)):
        res = k_closed_form(op, pi, p, **kw)
    else:
        res = k_numeric(op, pi, p, **kw)
    scales = "" if res.scales is None else ";".join(_g(v) for v in res.scales)
    rows = [["value", "method", "D", "s", "K_star"],
            [_g(res.value), res.method.value, scales, signature(pi), _g(k_star(pi))]]
    if res.starts_disagree:
        print("warning: optimizer starts disagree by more than 1e-4", file=sys.stderr)
    _write(_csv(rows), cfg.out)
    return EXIT_OK


def cmd_partition(args, cfg: ExperimentConfig) -> int:
    f, op = cfg.func(), cfg.op()
    d = f.dim
    if cfg.kind == bench.Kind.UNIFORM.value:
        if args.n is None and not cfg.budgets:
            raise ConfigError("uniform partition needs --n or --budgets")
        n = args.n if args.n is not None else bench.integer_root(cfg.budgets[-1], d)
        P = uniform_partition(f.domain, n)
        stats = {"n": n, "cells": len(P), "part1": len(P), "part2": 0,
                 "max_diam_part1": P.max_diam(), "max_diam_part2": 0.0}
    else:
        spec = bench.build_spec(f, op, cfg.p, cfg.kind, cfg.M)
        if args.n is not None:
            A = build_adaptive(spec, args.n)
        elif cfg.budgets:
            A = partition_for_budget(spec, cfg.budgets[-1])
        else:
            raise ConfigError("adaptive partition needs --n or --budgets")
        P, stats = A.partition, A.stats()
    N = cfg.budgets[-1] if cfg.budgets else len(P)
    stats["admissibility"] = N ** (1.0 / d) * P.max_diam()
    keys = ["n", "cells", "part1", "part2", "max_diam_part1", "max_diam_part2", "admissibility"]
    stat_text = _csv([keys, [_g(stats[k]) if isinstance(stats[k], float) else stats[k] for k in keys]])
    _write(P.to_csv(), cfg.out)
    (sys.stderr if cfg.out is None else sys.stdout).write(stat_text)
    return EXIT_OK


def cmd_converge(args, cfg: ExperimentConfig) -> int:
    f, op = cfg.func(), cfg.op()
    if not cfg.budgets:
        raise ConfigError("converge needs --budgets")
    records = []
    for kind in cfg.kind.split(","):
        records += bench.run_study(f, op, cfg.p, cfg.budgets, kind, M=cfg.M, q=cfg.quad_order,
                                   grid_points=cfg.grid_points, threads=args.threads)
    table, summary = bench.report(records, f.dim)
    _write(table, cfg.out)
    gates = [] if args.no_gates else bench.check_gates(records)
    for g in gates:
        summary += f"gate {g.name}: {'pass' if g.passed else 'FAIL'} ({g.detail})\n"
    (sys.stderr if cfg.out is None else sys.stdout).write(summary)
    return EXIT_OK if all(g.passed for g in gates) else EXIT_INVALID


def cmd_verify(args, cfg: ExperimentConfig) -> int:
    op = cfg.op()
    h = check_hypotheses(op).as_dict()
    k = detect_k(op)
    rows = [["property", "value"], ["operator", op.key()], ["k", k], ["m", k + 1]]
    rows += [[name, str(val).lower()] for name, val in h.items()]
    rows.append(["closed_form", str(closed_form_applicable(op)).lower()])
    rows.append(["lebesgue_estimate", _g(operator_norm_estimate(op))])
    _write(_csv(rows), cfg.out)
    return EXIT_OK


COMMANDS = {
    "constants": cmd_constants,
    "kfun": cmd_kfun,
    "partition": cmd_partition,
    "converge": cmd_converge,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config; flags override its values")
    common.add_argument("--op", dest="operator", help="operator, e.g. lagrange:equispaced:k=1:d=2")
    common.add_argument("--fn", dest="function", help="corpus function name")
    common.add_argument("--p", help="exponent in [1, inf]")
    common.add_argument("--kind", help="uniform, adaptive-km or adaptive-cf (comma list for converge)")
    common.add_argument("--budgets", help="comma-separated cell budgets")
    common.add_argument("--M", type=float, help="diameter cap for the modified error function")
    common.add_argument("--weight", help="weight name")
    common.add_argument("--quad-order", dest="quad_order", type=int)
    common.add_argument("--grid-points", dest="grid_points", type=int)
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--threads", type=int, default=os.cpu_count(), help="worker cap")

    parser = argparse.ArgumentParser(prog="blockadapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("constants", parents=[common], help="closed-form constants C(p) or C(p,s)")
    k = sub.add_parser("kfun", parents=[common], help="error function of a homogeneous polynomial")
    k.add_argument("--poly", required=True, help="terms coef:e1,...,ed joined by ';'")
    k.add_argument("--method", choices=["auto", "numeric", "closed-form"], default="auto")
    part = sub.add_parser("partition", parents=[common], help="emit a partition as blocks CSV")
    part.add_argument("--n", type=int, help="construction index (instead of a budget)")
    conv = sub.add_parser("converge", parents=[common], help="convergence study report")
    conv.add_argument("--no-gates", action="store_true", help="do not gate the exit code")
    sub.add_parser("verify", parents=[common], help="check operator hypotheses")
    return parser


def resolve_config(args) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        data = asdict(ExperimentConfig.from_json(text))
    for f in fields(ExperimentConfig):
        val = getattr(args, f.name, None)
        if val is None:
            continue
        if f.name == "budgets":
            try:
                val = [int(b) for b in val.split(",") if b.strip()]
            except ValueError:
                raise ConfigError(f"bad budgets {val!r}") from None
        data[f.name] = val
    if args.command == "converge" and "kind" in data:
        for kind in str(data["kind"]).split(","):
            ExperimentConfig.from_dict({**data, "kind": kind})
        kinds = data["kind"]
        cfg = ExperimentConfig.from_dict({**data, "kind": kinds.split(",")[0]})
        cfg.kind = kinds
        return cfg
    return ExperimentConfig.from_dict(data)


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, OperatorError, KFunError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch())

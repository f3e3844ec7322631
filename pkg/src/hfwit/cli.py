"""Batch command-line front end.

Subcommands map onto the library operations; all input and output uses the
s-expression file formats, runs are deterministic for a fixed seed and
configuration, and every error class has its own exit code (documented in
the README).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import calculus as ca
from . import classes as cl
from . import evaluator as ev
from . import extract as ex
from . import formula as fm
from . import hf, sexpr
from . import verify as vf

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_CHECK = 3
EXIT_NOT_CUT_FREE = 4
EXIT_AUDIT = 5
EXIT_UNSUPPORTED = 6
EXIT_MISSING_PHI = 7
EXIT_RESOURCE = 8
EXIT_MALFORMED = 9
EXIT_UNVERIFIED = 10
EXIT_CLASS = 11
EXIT_SIZE = 12

_BUILTIN_ORACLES = {"powerset": cl.powerset_entry}


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def load_config(args) -> dict:
    cfg = {
        "universe_rank": 2,
        "universe_cap": 4096,
        "pool_rank": 2,
        "witness_rank": 2,
        "seed": 0,
        "steps": ev.DEFAULT_STEP_CAP,
        "tc_cap": 10_000,
        "pcsf_plus": False,
        "oracles": [],
        "envelope": True,
        "theory": None,
    }
    path = os.environ.get("HFWIT_CONFIG")
    if path:
        with open(path) as fh:
            cfg.update(json.load(fh))
    for key in ("universe_rank", "universe_cap", "pool_rank", "witness_rank", "seed", "steps", "tc_cap"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "pcsf_plus", False):
        cfg["pcsf_plus"] = True
    if getattr(args, "theory", None):
        cfg["theory"] = args.theory
    if getattr(args, "oracle", None):
        cfg["oracles"] = list(cfg["oracles"]) + args.oracle
    return cfg


def build_registry(cfg) -> cl.Registry:
    reg = cl.Registry()
    for spec in cfg["oracles"]:
        name, _, builtin = spec.partition("=")
        builtin = builtin or name
        if builtin not in _BUILTIN_ORACLES:
            raise CliError(EXIT_USAGE, f"unknown builtin oracle {builtin}")
        entry = _BUILTIN_ORACLES[builtin]()
        entry.symbol = name
        reg.register_oracle(entry)
    return reg


def grid_from_config(cfg) -> vf.GridSpec:
    return vf.GridSpec(
        pool=hf.enumerate_rank(cfg["pool_rank"]),
        wit_pool=hf.enumerate_rank(cfg["witness_rank"]),
        universe=tuple(hf.enumerate_rank(cfg["universe_rank"], cfg["universe_cap"])),
        envelope=cfg["envelope"],
    )


def read_file(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read {path}: {exc}")


def load_defs(path: str, registry) -> list:
    try:
        return cl.load_defs_text(read_file(path), registry)
    except (sexpr.SexprError, ValueError) as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}")


def load_derivation(path: str, cfg=None):
    try:
        deriv = ca.parse_derivation(read_file(path))
    except (sexpr.SexprError, ValueError) as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}")
    if cfg and cfg.get("theory"):
        th = deriv.theory
        deriv = ca.Derivation(
            ca.TheoryId(cfg["theory"], th.level, th.budget, th.phi), deriv.root
        )
    return deriv


# ---------------------------------------------------------------- commands


def cmd_check(args, cfg) -> int:
    reg = build_registry(cfg)
    if args.defs:
        load_defs(args.defs, reg)
    deriv = load_derivation(args.path, cfg)
    bad = ca.check_derivation(deriv, reg)
    if bad:
        for line in bad:
            print(line)
        return EXIT_CHECK
    print("OK")
    if not ca.is_cut_free(deriv):
        print("note: derivation contains (cut); extraction will refuse it")
    return EXIT_OK


def cmd_extract(args, cfg) -> int:
    reg = build_registry(cfg)
    if args.defs:
        load_defs(args.defs, reg)
    deriv = load_derivation(args.path, cfg)
    fm.reset_fresh()
    try:
        bundle = ex.stratify_submodel(deriv, reg)
    except ex.NotCutFree as exc:
        raise CliError(EXIT_NOT_CUT_FREE, str(exc))
    except ex.AuditFailed as exc:
        raise CliError(EXIT_AUDIT, str(exc))
    except ex.MissingPhiWitness as exc:
        raise CliError(EXIT_MISSING_PHI, str(exc))
    except ex.UnsupportedShape as exc:
        raise CliError(EXIT_UNSUPPORTED, str(exc))
    with open(args.out, "w") as fh:
        fh.write(vf.show_bundle_defs(bundle))
    with open(args.obligations, "w") as fh:
        fh.write(vf.show_bundle_obligations(bundle))
    print(f"class {bundle.klass}")
    for (f, name) in bundle.delta:
        print(f"witness {name} for {fm.show_formula(f)}")
    if bundle.condition is not None:
        print("condition " + sexpr.show(ex.cond_sexpr(bundle.condition)))
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    reg = build_registry(cfg)
    load_defs(args.defs, reg)
    if args.fname not in reg.defs:
        raise CliError(EXIT_USAGE, f"no definition named {args.fname}")
    fdef = reg.defs[args.fname]
    try:
        values = [hf.parse(a) for a in args.args]
    except ValueError as exc:
        raise CliError(EXIT_PARSE, str(exc))
    n = len(fdef.normals)
    if len(values) != n + len(fdef.safes):
        raise CliError(
            EXIT_USAGE,
            f"{args.fname} takes {n}+{len(fdef.safes)} arguments, got {len(values)}",
        )
    old = hf.set_tc_card_limit(cfg["tc_cap"])
    try:
        report = ev.evaluate(
            fdef, tuple(values[:n]), tuple(values[n:]), reg, step_cap=cfg["steps"]
        )
    except hf.ResourceLimit as exc:
        raise CliError(EXIT_RESOURCE, str(exc))
    except hf.MalformedFunction as exc:
        raise CliError(EXIT_MALFORMED, str(exc))
    finally:
        hf.set_tc_card_limit(old)
    print(hf.show(report.result))
    if args.stats:
        print(
            f"steps {report.steps} max-tc {report.max_tc_card_seen} memo-hits {report.memo_hits}",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_verify(args, cfg) -> int:
    reg = build_registry(cfg)
    try:
        bundle = vf.parse_bundle(read_file(args.obligations), read_file(args.defs), reg)
    except (sexpr.SexprError, ValueError) as exc:
        raise CliError(EXIT_PARSE, str(exc))
    spec = grid_from_config(cfg)
    report = vf.verify_bundle(bundle, spec)
    print(report.line())
    if not report.ok:
        for f in report.failures[:10]:
            print("fail:", f)
        return EXIT_UNVERIFIED
    return EXIT_OK


def cmd_classify(args, cfg) -> int:
    reg = build_registry(cfg)
    defs = load_defs(args.defs, reg)
    bad = 0
    for d in defs:
        viols = cl.validate_class(d, args.klass, reg, pcsf_plus=cfg["pcsf_plus"])
        if viols:
            bad += 1
            print(f"{d.name}: REJECT")
            for v in viols[:4]:
                print("  " + v)
        else:
            print(f"{d.name}: ok [{args.klass}]")
    return EXIT_CLASS if bad else EXIT_OK


def cmd_sigma1(args, cfg) -> int:
    reg = build_registry(cfg)
    load_defs(args.defs, reg)
    if args.fname not in reg.defs:
        raise CliError(EXIT_USAGE, f"no definition named {args.fname}")
    fdef = reg.defs[args.fname]
    try:
        if args.bang:
            phi = cl.synth_sigma1_bang(fdef, reg, result=args.result)
        else:
            phi = cl.synth_sigma1(fdef, reg, result=args.result)
    except cl.UnsupportedScheme as exc:
        raise CliError(EXIT_UNSUPPORTED, str(exc))
    print(fm.show_formula(phi))
    return EXIT_OK


def cmd_sizecheck(args, cfg) -> int:
    reg = build_registry(cfg)
    load_defs(args.defs, reg)
    if args.fname not in reg.defs:
        raise CliError(EXIT_USAGE, f"no definition named {args.fname}")
    fdef = reg.defs[args.fname]
    try:
        if args.poly:
            poly = cl.parse_poly(args.poly, len(fdef.normals))
        else:
            poly = cl.derive_size_poly(fdef, reg)
            print("derived polynomial:", poly.show())
    except (ValueError, cl.UnsupportedScheme) as exc:
        raise CliError(EXIT_UNSUPPORTED, str(exc))
    pool = hf.enumerate_rank(cfg["pool_rank"])
    old = hf.set_tc_card_limit(cfg["tc_cap"])
    try:
        cx = ev.check_size_bound(
            fdef, poly, reg, samples=args.samples, seed=cfg["seed"], pool=pool,
            step_cap=cfg["steps"],
        )
    except hf.ResourceLimit as exc:
        raise CliError(EXIT_RESOURCE, str(exc))
    finally:
        hf.set_tc_card_limit(old)
    if cx is None:
        print(f"pass ({args.samples} samples, seed {cfg['seed']})")
        return EXIT_OK
    print("counterexample:", cx)
    return EXIT_SIZE


def main(argv=None) -> int:
    top = argparse.ArgumentParser(prog="hfwit", description=__doc__)
    top.add_argument("--universe-rank", dest="universe_rank", type=int)
    top.add_argument("--universe-cap", dest="universe_cap", type=int)
    top.add_argument("--pool-rank", dest="pool_rank", type=int)
    top.add_argument("--witness-rank", dest="witness_rank", type=int)
    top.add_argument("--seed", dest="seed", type=int)
    top.add_argument("--steps", dest="steps", type=int)
    top.add_argument("--tc-cap", dest="tc_cap", type=int)
    top.add_argument("--pcsf-plus", dest="pcsf_plus", action="store_true")
    top.add_argument("--theory", choices=["t0", "t1", "t2d", "t3"],
                     help="override the derivation file's theory tag")
    top.add_argument("--oracle", action="append", metavar="NAME=BUILTIN")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="check a derivation file")
    p.add_argument("path")
    p.add_argument("--defs", help="definition file for defined symbols")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("extract", help="extract witnesses from a cut-free derivation")
    p.add_argument("path")
    p.add_argument("--out", required=True, help="output definition file")
    p.add_argument("--obligations", required=True, help="output obligations file")
    p.add_argument("--defs", help="definition file for defined symbols")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("eval", help="evaluate a definition on HF literals")
    p.add_argument("defs")
    p.add_argument("fname")
    p.add_argument("args", nargs="*")
    p.add_argument("--stats", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="replay an extracted bundle over the grid")
    p.add_argument("defs")
    p.add_argument("obligations")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("classify", help="validate definitions against a class grammar")
    p.add_argument("defs")
    p.add_argument("--class", dest="klass", required=True, choices=list(cl.TAGS))
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("sigma1", help="print the defining formula of a definition")
    p.add_argument("defs")
    p.add_argument("fname")
    p.add_argument("--bang", action="store_true", help="unique-existence form")
    p.add_argument("--result", default="b")
    p.set_defaults(fn=cmd_sigma1)

    p = sub.add_parser("sizecheck", help="empirical transitive-closure size bound")
    p.add_argument("defs")
    p.add_argument("fname")
    p.add_argument("--poly", help="candidate polynomial, e.g. 'x1+x2+3'")
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(fn=cmd_sizecheck)

    args = top.parse_args(argv)
    cfg = load_config(args)
    try:
        return args.fn(args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

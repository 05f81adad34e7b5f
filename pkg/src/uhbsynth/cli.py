"""Command-line front end: synthesize, check, render, simulate, expand.

Exit codes are a stable contract: 0 success, 1 empty result set without
--allow-empty, 2 parse/validation failure, 3 candidate ceiling exceeded,
4 verification failure, 5 I/O failure.  All commands are deterministic for
fixed inputs and any worker count.
"""

import argparse
import json
import sys
from pathlib import Path

from uhbsynth.candidates import SynthesisBounds
from uhbsynth.diagnostics import Diagnostic, InputError
from uhbsynth.dot import render_dot
from uhbsynth.executions import enumerate_executions
from uhbsynth.expander import CacheGeometry, ExpansionError, expand, render_skeleton
from uhbsynth.graph import check_acyclic, check_dv, check_swmr, check_vicl_pairing
from uhbsynth.litmus import from_json, render_program, to_json, well_formed
from uhbsynth.patterns import (
    BUILTIN_PATTERNS,
    builtin_pattern_text,
    match,
    parse_pattern,
)
from uhbsynth.serialize import (
    embedding_from_doc,
    embedding_to_doc,
    graph_from_json,
    graph_to_json,
)
from uhbsynth.sim import SimConfig, SimDeadlock, leak_check, simulate
from uhbsynth.specdsl import BUILTIN_SPECS, builtin_spec_text, parse_spec
from uhbsynth.synth import BoundsCeilingError, SynthResult, filter_minimal, synthesize, verify_result

EXIT_OK = 0
EXIT_EMPTY = 1
EXIT_PARSE = 2
EXIT_BOUNDS = 3
EXIT_VERIFY = 4
EXIT_IO = 5


def _load_spec(ref: str):
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTIN_SPECS:
            raise InputError(Diagnostic("E_UNKNOWN_BUILTIN", f"unknown builtin spec '{name}'"))
        return parse_spec(builtin_spec_text(name))
    return parse_spec(Path(ref).read_text("utf-8"))


def _load_pattern(ref: str):
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        return parse_pattern(builtin_pattern_text(name))
    return parse_pattern(Path(ref).read_text("utf-8"))


def _load_litmus(path: str):
    return from_json(Path(path).read_text("utf-8"))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="uhbsynth",
        description="Synthesize and analyze security litmus tests over "
                    "happens-before executions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="search for programs embedding a threat pattern")
    _spec_pattern_args(p)
    p.add_argument("--max-instr", type=int, default=4)
    p.add_argument("--max-threads", type=int, default=2)
    p.add_argument("--max-vaddrs", type=int, default=2)
    p.add_argument("--max-paddrs", type=int, default=2)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--allow-empty", action="store_true")
    p.add_argument("--minimal", action="store_true",
                   help="drop results containing a smaller result as a sub-program")
    p.add_argument("--ceiling", type=int, default=10_000_000,
                   help="candidate-count ceiling (exceeding it is an error)")
    p.add_argument("--actors", default="attacker,victim")

    p = sub.add_parser("check", help="audit a litmus test's executions against a pattern")
    _spec_pattern_args(p)
    p.add_argument("--litmus", required=True)

    p = sub.add_parser("verify", help="re-verify a stored synthesis result")
    _spec_pattern_args(p)
    p.add_argument("--result", required=True,
                   help="result file prefix (PREFIX.litmus.json + PREFIX.witness.json)")

    p = sub.add_parser("render", help="render a litmus test's executions to DOT")
    p.add_argument("--spec", required=True)
    p.add_argument("--litmus", required=True)
    p.add_argument("--execution", type=int, default=0)
    p.add_argument("--dot", required=True, help="output DOT file")

    p = sub.add_parser("sim", help="run the timing simulator")
    p.add_argument("--litmus", required=True)
    p.add_argument("--secret", type=int, choices=(0, 1), default=None)
    p.add_argument("--hit-latency", type=int, default=10)
    p.add_argument("--miss-latency", type=int, default=100)
    p.add_argument("--threshold", type=int, default=60)
    p.add_argument("--no-speculative-invalidation", action="store_true")

    p = sub.add_parser("expand", help="expand a litmus test to an attack skeleton")
    p.add_argument("--litmus", required=True)
    p.add_argument("--variant", default="other")
    p.add_argument("--line-size", type=int, default=64)
    p.add_argument("--sets", type=int, default=64)
    p.add_argument("--ways", type=int, default=8)
    p.add_argument("--inclusive", dest="inclusive", action="store_true", default=True)
    p.add_argument("--noninclusive", dest="inclusive", action="store_false")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--out", default=None, help="output file (default: stdout)")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except InputError as e:
        for d in e.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_PARSE
    except BoundsCeilingError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BOUNDS
    except (ExpansionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except SimDeadlock as e:
        print(f"deadlock: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO


def _spec_pattern_args(p):
    p.add_argument("--spec", required=True,
                   help=".uspec file or builtin:<%s>" % "|".join(BUILTIN_SPECS))
    p.add_argument("--pattern", required=True,
                   help=".threat file or builtin:<%s>" % "|".join(BUILTIN_PATTERNS))


def _dispatch(args) -> int:
    return {
        "synth": cmd_synth,
        "check": cmd_check,
        "verify": cmd_verify,
        "render": cmd_render,
        "sim": cmd_sim,
        "expand": cmd_expand,
    }[args.command](args)


def cmd_synth(args) -> int:
    spec = _load_spec(args.spec)
    pattern = _load_pattern(args.pattern)
    bounds = SynthesisBounds(args.max_instr, args.max_threads,
                             args.max_vaddrs, args.max_paddrs)
    actors = tuple(a.strip() for a in args.actors.split(",") if a.strip())
    results = synthesize(spec, pattern, bounds, actors=actors,
                         candidate_ceiling=args.ceiling, workers=args.workers)
    if args.minimal:
        results = filter_minimal(results)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    index = {"spec": spec.name, "pattern": pattern.name,
             "bounds": {"max_instructions": bounds.max_instructions,
                        "max_threads": bounds.max_threads,
                        "max_vaddrs": bounds.max_vaddrs,
                        "max_paddrs": bounds.max_paddrs},
             "results": [], "variants": {}}
    for k, r in enumerate(results):
        stem = f"{k:04d}_{r.variant}"
        (outdir / f"{stem}.litmus.json").write_text(to_json(r.program), "utf-8")
        (outdir / f"{stem}.dot").write_text(render_dot(r.witness, stem), "utf-8")
        (outdir / f"{stem}.witness.json").write_text(graph_to_json(r.witness), "utf-8")
        (outdir / f"{stem}.summary.txt").write_text(_summary(r), "utf-8")
        index["results"].append({"file": stem, "variant": r.variant,
                                 "mechanism": r.embedding.mechanism})
        index["variants"][r.variant] = index["variants"].get(r.variant, 0) + 1
    (outdir / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", "utf-8")
    print(f"{len(results)} result(s) written to {outdir}")
    if not results and not args.allow_empty:
        return EXIT_EMPTY
    return EXIT_OK


def _summary(r: SynthResult) -> str:
    lines = [f"variant: {r.variant}", f"mechanism: {r.embedding.mechanism}", ""]
    lines.append(render_program(r.program))
    lines.append("")
    lines.append("roles:")
    for role, val in r.embedding.report():
        lines.append(f"  {role}: {val}")
    if r.program.secret_paddr:
        lines.append(f"secret address: {r.program.secret_paddr}")
    return "\n".join(lines) + "\n"


def cmd_check(args) -> int:
    spec = _load_spec(args.spec)
    pattern = _load_pattern(args.pattern)
    try:
        prog = _load_litmus(args.litmus)
    except (json.JSONDecodeError, KeyError) as e:
        print(f"error: malformed litmus JSON: {e}", file=sys.stderr)
        return EXIT_PARSE
    ok, diags = well_formed(prog, spec)
    if not ok:
        for d in diags:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_PARSE
    notes = []
    graphs = enumerate_executions(spec, prog, notes)
    embeddings = sum(len(match(pattern, g)) for g in graphs)
    if not graphs:
        print("no consistent execution")
        for n in notes:
            print(f"  note: {n}")
        return EXIT_OK
    audits = {
        "acyclic": all(check_acyclic(g) for g in graphs),
        "vicl pairing": all(check_vicl_pairing(g) for g in graphs),
        "swmr": all(check_swmr(g) for g in graphs),
        "data-value": all(check_dv(g, prog) for g in graphs),
    }
    print(f"executions: {len(graphs)}")
    print(f"embeddings: {embeddings}")
    for name, passed in audits.items():
        print(f"{name}: {'pass' if passed else 'FAIL'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = _load_spec(args.spec)
    pattern = _load_pattern(args.pattern)
    prefix = args.result
    try:
        prog = _load_litmus(prefix + ".litmus.json")
        witness = graph_from_json(
            Path(prefix + ".witness.json").read_text("utf-8"),
            program=None)
    except FileNotFoundError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    from uhbsynth.executions import iter_executions
    from uhbsynth.synth import classify_variant, strip_annotations

    bare = strip_annotations(prog)
    want = witness.dedup_key()
    found = None
    for g in iter_executions(spec, bare):
        if g.dedup_key() == want:
            found = g
            break
    if found is None:
        print("verify: FAIL (witness is not an execution of the program)")
        return EXIT_VERIFY
    embs = match(pattern, found)
    if not embs:
        print("verify: FAIL (no embedding in the stored witness)")
        return EXIT_VERIFY
    print(f"verify: ok ({len(embs)} embedding(s); "
          f"variant {classify_variant(pattern, bare, embs[0])})")
    return EXIT_OK


def cmd_render(args) -> int:
    spec = _load_spec(args.spec)
    try:
        prog = _load_litmus(args.litmus)
    except (json.JSONDecodeError, KeyError) as e:
        print(f"error: malformed litmus JSON: {e}", file=sys.stderr)
        return EXIT_PARSE
    ok, diags = well_formed(prog, spec)
    if not ok:
        for d in diags:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_PARSE
    graphs = enumerate_executions(spec, prog)
    if not graphs:
        print("no consistent execution", file=sys.stderr)
        return EXIT_VERIFY
    k = args.execution
    if not (0 <= k < len(graphs)):
        print(f"error: execution index {k} out of range (have {len(graphs)})",
              file=sys.stderr)
        return EXIT_PARSE
    Path(args.dot).write_text(render_dot(graphs[k], Path(args.litmus).stem), "utf-8")
    print(f"wrote {args.dot} ({len(graphs)} execution(s) total)")
    return EXIT_OK


def cmd_sim(args) -> int:
    try:
        prog = _load_litmus(args.litmus)
    except (json.JSONDecodeError, KeyError) as e:
        print(f"error: malformed litmus JSON: {e}", file=sys.stderr)
        return EXIT_PARSE
    cfg = SimConfig(
        hit_latency=args.hit_latency,
        miss_latency=args.miss_latency,
        threshold=args.threshold,
        invalidation_on_speculative_write=not args.no_speculative_invalidation,
    )
    if args.secret is None:
        if prog.secret_paddr is None:
            print("error: litmus designates no secret address; pass --secret",
                  file=sys.stderr)
            return EXIT_PARSE
        leak = leak_check(prog, cfg)
        print(f"leak: {'yes' if leak else 'no'}")
        for s in (0, 1):
            tr = simulate(prog, cfg, s)
            print(f"secret={s}: {tr.classification} "
                  f"(inferred bit {tr.inferred_secret_bit})")
        return EXIT_OK
    tr = simulate(prog, cfg, args.secret)
    print(f"observation i{tr.observation_id} ({tr.observation_kind}): "
          f"{tr.classification}  [>= {cfg.threshold} cycles is a miss]")
    print(f"inferred secret bit: {tr.inferred_secret_bit}")
    print(f"{'instr':>6} {'issue':>7} {'done':>7} {'cycles':>7}  class")
    for iid in sorted(tr.records):
        r = tr.records[iid]
        if r.issue is None:
            print(f"{iid:>6} {'-':>7} {'-':>7} {'-':>7}  never issued"
                  f"{' (squashed)' if r.squashed else ''}")
            continue
        lat = tr.latency(iid)
        klass = "" if r.hit is None else ("hit" if r.hit else "miss")
        flags = " squashed" if r.squashed else ""
        print(f"{iid:>6} {r.issue:>7} {r.complete:>7} {lat:>7}  {klass}{flags}")
    print(f"swmr at runtime: {'pass' if tr.swmr_ok else 'FAIL'}")
    return EXIT_OK


def cmd_expand(args) -> int:
    try:
        prog = _load_litmus(args.litmus)
    except (json.JSONDecodeError, KeyError) as e:
        print(f"error: malformed litmus JSON: {e}", file=sys.stderr)
        return EXIT_PARSE
    geom = CacheGeometry(args.line_size, args.sets, args.ways, args.inclusive)
    sk = expand(prog, args.variant, geom, stride=args.stride)
    text = render_skeleton(sk)
    if args.out:
        Path(args.out).write_text(text, "utf-8")
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Parser and printer for the machine description language (`.uspec` files).

The format is line oriented: one declaration per line, `#` comments, and
`axiom <name>: forall <vars> | <preds> => <DNF of edges>` statements which may
continue onto indented lines.  `parse_spec` and `render_spec` round-trip:
rendering a parsed machine and re-parsing it yields a structurally equal
value (axioms are kept sorted by name, which is also the canonical render
order).
"""

import re
from importlib import resources

from uhbsynth.diagnostics import Diagnostic, InputError
from uhbsynth.machine import (
    Axiom,
    CacheLevelDecl,
    CoherencePolicy,
    EdgeAssertion,
    MicroarchSpec,
    NodeTemplate,
    Predicate,
    SpeculationPolicy,
    default_access_stage,
    validate_spec,
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")

BUILTIN_SPECS = ("ooo_single_core", "two_core_invalidation")


def _strip_comment(line: str) -> str:
    pos = line.find("#")
    return line if pos < 0 else line[:pos]


def _is_ident(tok: str) -> bool:
    return bool(_IDENT.match(tok))


def _parse_bool(tok: str, lineno: int, what: str) -> bool:
    if tok == "on":
        return True
    if tok == "off":
        return False
    raise InputError(Diagnostic("E_SYNTAX", f"{what}: expected on/off, got '{tok}'", lineno, 1))


def _logical_lines(text: str):
    """Yield (lineno, line) with indented lines folded into the previous one."""
    raw = text.split("\n")
    pending = None
    for idx, line in enumerate(raw, start=1):
        body = _strip_comment(line).rstrip()
        if not body.strip():
            continue
        if body[0] in " \t" and pending is not None:
            pending = (pending[0], pending[1] + " " + body.strip())
            continue
        if pending is not None:
            yield pending
        pending = (idx, body.strip())
    if pending is not None:
        yield pending


def parse_spec(text: str) -> MicroarchSpec:
    """Parse machine description source into a validated MicroarchSpec."""
    name = None
    cores = None
    stages = None
    access_stage = ""
    caches = []
    coherence = CoherencePolicy()
    write_allocate = False
    has_flush = False
    speculation = SpeculationPolicy()
    axioms = []
    axiom_lines = {}
    seen = set()

    def dup(key, lineno):
        if key in seen:
            raise InputError(Diagnostic("E_DUPLICATE_DECL", f"duplicate '{key}' declaration", lineno, 1))
        seen.add(key)

    for lineno, line in _logical_lines(text):
        toks = line.split()
        kw = toks[0]
        if kw == "machine":
            dup("machine", lineno)
            if len(toks) != 2 or not _is_ident(toks[1]):
                raise InputError(Diagnostic("E_SYNTAX", "machine: expected one identifier", lineno, 1))
            name = toks[1]
        elif kw == "cores":
            dup("cores", lineno)
            if len(toks) != 2 or not toks[1].isdigit():
                raise InputError(Diagnostic("E_SYNTAX", "cores: expected one integer", lineno, 1))
            cores = int(toks[1])
        elif kw == "stages":
            dup("stages", lineno)
            if len(toks) < 2 or not all(_is_ident(t) for t in toks[1:]):
                raise InputError(Diagnostic("E_SYNTAX", "stages: expected stage identifiers", lineno, 1))
            stages = tuple(toks[1:])
        elif kw == "access_stage":
            dup("access_stage", lineno)
            if len(toks) != 2:
                raise InputError(Diagnostic("E_SYNTAX", "access_stage: expected one stage name", lineno, 1))
            access_stage = toks[1]
        elif kw == "cache":
            caches.append(_parse_cache(toks, lineno))
        elif kw == "coherence":
            dup("coherence", lineno)
            coherence = _parse_coherence(toks, lineno)
        elif kw == "write_allocate":
            dup("write_allocate", lineno)
            write_allocate = _parse_bool(toks[1] if len(toks) == 2 else "?", lineno, "write_allocate")
        elif kw == "flush_instruction":
            dup("flush_instruction", lineno)
            has_flush = _parse_bool(toks[1] if len(toks) == 2 else "?", lineno, "flush_instruction")
        elif kw == "speculation":
            dup("speculation", lineno)
            speculation = _parse_speculation(toks, lineno)
        elif kw == "axiom":
            ax = _parse_axiom(line, lineno)
            axioms.append(ax)
            axiom_lines[ax.name] = lineno
        else:
            raise InputError(Diagnostic("E_UNKNOWN_DECL", f"unknown declaration '{kw}'", lineno, 1))

    missing = [k for k, v in (("machine", name), ("cores", cores), ("stages", stages)) if v is None]
    if missing:
        raise InputError(Diagnostic("E_MISSING_DECL", f"missing declaration(s): {', '.join(missing)}"))

    spec = MicroarchSpec(
        name=name,
        cores=cores,
        stages=stages,
        cache_levels=tuple(caches),
        coherence=coherence,
        write_allocate=write_allocate,
        has_flush_instruction=has_flush,
        speculation=speculation,
        axioms=tuple(sorted(axioms, key=lambda a: a.name)),
        access_stage=access_stage or default_access_stage(stages),
    )
    diags = validate_spec(spec)
    if diags:
        located = []
        for d in diags:
            m = re.search(r"axiom '([^']+)'", d.message)
            if m and d.line == 0 and m.group(1) in axiom_lines:
                d = Diagnostic(d.code, d.message, axiom_lines[m.group(1)], 1)
            located.append(d)
        raise InputError(located)
    return spec


def _parse_cache(toks, lineno) -> CacheLevelDecl:
    if len(toks) < 3 or not _is_ident(toks[1]):
        raise InputError(Diagnostic("E_SYNTAX", "cache: expected 'cache <id> private|shared sets=<n>'", lineno, 1))
    private = {"private": True, "shared": False}.get(toks[2])
    if private is None:
        raise InputError(Diagnostic("E_SYNTAX", f"cache: expected private/shared, got '{toks[2]}'", lineno, 1))
    num_sets = 1
    inclusive = True
    for tok in toks[3:]:
        if tok.startswith("sets="):
            try:
                num_sets = int(tok[5:])
            except ValueError:
                raise InputError(Diagnostic("E_SYNTAX", f"cache: bad set count '{tok}'", lineno, 1))
        elif tok == "inclusive":
            inclusive = True
        elif tok == "noninclusive":
            inclusive = False
        else:
            raise InputError(Diagnostic("E_SYNTAX", f"cache: unknown attribute '{tok}'", lineno, 1))
    return CacheLevelDecl(toks[1], private, num_sets, inclusive)


def _parse_coherence(toks, lineno) -> CoherencePolicy:
    if len(toks) >= 2 and toks[1] == "none" and len(toks) == 2:
        return CoherencePolicy("none", False)
    if len(toks) >= 2 and toks[1] == "invalidation":
        spec_vis = False
        for tok in toks[2:]:
            if tok == "speculative_write_requests":
                spec_vis = True
            else:
                raise InputError(Diagnostic("E_SYNTAX", f"coherence: unknown attribute '{tok}'", lineno, 1))
        return CoherencePolicy("invalidation_based", spec_vis)
    raise InputError(Diagnostic("E_SYNTAX", "coherence: expected 'none' or 'invalidation'", lineno, 1))


def _parse_speculation(toks, lineno) -> SpeculationPolicy:
    vals = {"permission_bypass": False, "branch_misprediction": False, "speculative_flush": False}
    for tok in toks[1:]:
        if "=" not in tok:
            raise InputError(Diagnostic("E_SYNTAX", f"speculation: expected key=on/off, got '{tok}'", lineno, 1))
        key, _, val = tok.partition("=")
        if key not in vals:
            raise InputError(Diagnostic("E_SYNTAX", f"speculation: unknown flag '{key}'", lineno, 1))
        vals[key] = _parse_bool(val, lineno, f"speculation {key}")
    return SpeculationPolicy(
        allows_speculative_loads_past_permission_check=vals["permission_bypass"],
        allows_branch_misprediction=vals["branch_misprediction"],
        allows_speculative_flush=vals["speculative_flush"],
    )


# axiom name: forall i, j | p(i), q(i, j) => edge i.X -> j.Y : label & ... | ...
_AXIOM_RE = re.compile(
    r"axiom\s+(?P<name>\w+)\s*:\s*forall\s+(?P<vars>[\w\s,]+?)"
    r"(?:\|(?P<preds>.*?))?=>(?P<body>.*)$"
)
_PRED_RE = re.compile(r"(\w+)\s*\(\s*(\w+)\s*(?:,\s*(\w+)\s*)?\)$")
_EDGE_RE = re.compile(r"edge\s+(\w+)\.(\w+)\s*->\s*(\w+)\.(\w+)\s*:\s*(\w+)$")


def _parse_axiom(line: str, lineno: int) -> Axiom:
    m = _AXIOM_RE.match(line)
    if not m:
        raise InputError(Diagnostic("E_SYNTAX", "axiom: expected 'axiom <name>: forall <vars> [| preds] => body'", lineno, 1))
    name = m.group("name")
    variables = tuple(v.strip() for v in m.group("vars").split(",") if v.strip())
    if not variables or len(variables) > 2 or not all(_is_ident(v) for v in variables):
        raise InputError(Diagnostic("E_SYNTAX", f"axiom '{name}': expected one or two variables", lineno, 1))
    predicates = []
    preds_src = (m.group("preds") or "").strip()
    if preds_src:
        chunks = [c.strip() for c in preds_src.split(",") if c.strip()]
        predicates = _rejoin_predicates(chunks, name, lineno)
    body = []
    for disjunct_src in m.group("body").split("|"):
        assertions = []
        for assertion_src in disjunct_src.split("&"):
            assertion_src = assertion_src.strip()
            if not assertion_src:
                raise InputError(Diagnostic("E_SYNTAX", f"axiom '{name}': empty edge assertion", lineno, 1))
            em = _EDGE_RE.match(assertion_src)
            if not em:
                raise InputError(Diagnostic("E_SYNTAX", f"axiom '{name}': bad edge assertion '{assertion_src}'", lineno, 1))
            src = NodeTemplate(em.group(1), em.group(2))
            dst = NodeTemplate(em.group(3), em.group(4))
            if src == dst:
                raise InputError(Diagnostic("E_SELF_EDGE", f"axiom '{name}': edge endpoints are identical", lineno, 1))
            assertions.append(EdgeAssertion(src, dst, em.group(5)))
        if not assertions:
            raise InputError(Diagnostic("E_SYNTAX", f"axiom '{name}': empty disjunct", lineno, 1))
        body.append(tuple(assertions))
    return Axiom(name, variables, tuple(predicates), tuple(body))


def _rejoin_predicates(chunks, name, lineno):
    """Re-join comma-split pieces so 'po(i, j)' survives splitting on ','."""
    preds = []
    buf = ""
    for chunk in chunks:
        buf = chunk if not buf else buf + ", " + chunk
        if buf.count("(") == buf.count(")") and buf.endswith(")"):
            pm = _PRED_RE.match(buf)
            if not pm:
                raise InputError(Diagnostic("E_SYNTAX", f"axiom '{name}': bad predicate '{buf}'", lineno, 1))
            args = (pm.group(2),) if pm.group(3) is None else (pm.group(2), pm.group(3))
            preds.append(Predicate(pm.group(1), args))
            buf = ""
    if buf:
        raise InputError(Diagnostic("E_SYNTAX", f"axiom '{name}': bad predicate '{buf}'", lineno, 1))
    return preds


def render_spec(spec: MicroarchSpec) -> str:
    """Deterministic canonical text; axioms sorted by name."""
    lines = [
        f"machine {spec.name}",
        f"cores {spec.cores}",
        "stages " + " ".join(spec.stages),
        f"access_stage {spec.access_stage}",
    ]
    for c in spec.cache_levels:
        attrs = ["private" if c.private_to_core else "shared", f"sets={c.num_sets}",
                 "inclusive" if c.inclusive else "noninclusive"]
        lines.append(f"cache {c.level_id} " + " ".join(attrs))
    if spec.coherence.kind == "none":
        lines.append("coherence none")
    else:
        extra = " speculative_write_requests" if spec.coherence.speculative_write_requests_visible else ""
        lines.append("coherence invalidation" + extra)
    onoff = lambda b: "on" if b else "off"
    lines.append(f"write_allocate {onoff(spec.write_allocate)}")
    lines.append(f"flush_instruction {onoff(spec.has_flush_instruction)}")
    sp = spec.speculation
    lines.append(
        "speculation "
        f"permission_bypass={onoff(sp.allows_speculative_loads_past_permission_check)} "
        f"branch_misprediction={onoff(sp.allows_branch_misprediction)} "
        f"speculative_flush={onoff(sp.allows_speculative_flush)}"
    )
    for ax in sorted(spec.axioms, key=lambda a: a.name):
        lines.append(_render_axiom(ax))
    return "\n".join(lines) + "\n"


def _render_axiom(ax: Axiom) -> str:
    head = f"axiom {ax.name}: forall " + ", ".join(ax.variables)
    if ax.predicates:
        head += " | " + ", ".join(f"{p.name}(" + ", ".join(p.args) + ")" for p in ax.predicates)
    disjuncts = []
    for disjunct in ax.body:
        disjuncts.append(" & ".join(
            f"edge {a.src.var}.{a.src.point} -> {a.dst.var}.{a.dst.point} : {a.label}"
            for a in disjunct))
    return head + " => " + " | ".join(disjuncts)


def builtin_spec(which: str) -> MicroarchSpec:
    """Load one of the reference machines shipped with the package."""
    if which not in BUILTIN_SPECS:
        raise ValueError(f"unknown builtin spec '{which}' (have: {', '.join(BUILTIN_SPECS)})")
    text = resources.files("uhbsynth.data").joinpath(f"{which}.uspec").read_text("utf-8")
    return parse_spec(text)


def builtin_spec_text(which: str) -> str:
    if which not in BUILTIN_SPECS:
        raise ValueError(f"unknown builtin spec '{which}'")
    return resources.files("uhbsynth.data").joinpath(f"{which}.uspec").read_text("utf-8")

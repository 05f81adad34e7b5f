"""Threat patterns: sub-graph shapes with presence and absence constraints.

A pattern names roles (flush, filler, reload, prime, probe, evictor), gives
each role predicates over the instruction or lifetime it may bind to, lists
required happens-before edges between role events, and adds structured
constraints: sourcing (the reload reads the filler's line), eviction cause
(the evictor really ended the primed lifetime), consecutiveness, and lifetime
absences (a hitting reload instantiates no new pair).

Matching is exhaustive over role assignments; graphs stay small, and an even
dumber full-product matcher in the test suite cross-checks the results.
"""

from dataclasses import dataclass
from importlib import resources

from uhbsynth.diagnostics import Diagnostic, InputError
from uhbsynth.graph import (
    CAUSE_DISPLACED,
    CAUSE_FLUSHED,
    CAUSE_INVALIDATED,
    FlushNode,
    Reach,
    StageNode,
    UhbGraph,
    Vicl,
    ViclNode,
)

BUILTIN_PATTERNS = ("flush_reload", "prime_probe")

OPCODE_NAMES = ("Read", "Write", "Flush", "Fence", "Branch")


@dataclass(frozen=True)
class Alternative:
    """One admissible actor/commit/opcode combination for a role."""

    actor: str     # attacker | victim
    commit: str    # committed | squashed
    opcodes: tuple
    needs_dep: bool = False   # address-dependent on a prior read of the secret


@dataclass(frozen=True)
class PatternNode:
    role: str
    kind: str                 # access | vicl | evictor
    addr_class: str = ""      # roles sharing a class letter bind to one paddr
    optional: bool = False
    actor: str = "any"
    commit: str = "any"
    opcodes: tuple = ()
    creates: str = "any"      # required | forbidden | any
    alternatives: tuple = ()


@dataclass(frozen=True)
class PatternEdge:
    src: str
    src_point: str            # create | expire | access | event
    dst: str
    dst_point: str
    optional: bool = False    # skipped when an optional endpoint is unbound


@dataclass(frozen=True)
class NodeAbsence:
    role: str
    template: str = "new_vicl"


@dataclass(frozen=True)
class ThreatPattern:
    name: str
    nodes: tuple
    edges: tuple
    absences: tuple
    constraints: tuple        # ("sourced_by", a, b) | ("evicts", e, t) | ("consecutive", a, b)
    roles: tuple

    def node(self, role: str) -> PatternNode:
        for n in self.nodes:
            if n.role == role:
                return n
        raise KeyError(role)


@dataclass(frozen=True)
class Embedding:
    """One instantiation of a pattern inside an execution."""

    pattern: str
    bindings: tuple          # of (role, instruction id or Vicl or None)
    mechanism: str = ""      # flush | collision | invalidation | ""

    def get(self, role: str):
        for r, v in self.bindings:
            if r == role:
                return v
        return None

    def report(self) -> tuple:
        out = []
        for r, v in self.bindings:
            if v is None:
                out.append((r, "(absent)"))
            elif isinstance(v, Vicl):
                out.append((r, v.brief()))
            else:
                out.append((r, f"i{v}"))
        if self.mechanism:
            out.append(("mechanism", self.mechanism))
        return tuple(out)


def validate_pattern(p: ThreatPattern) -> list:
    out = []
    if not p.nodes:
        out.append(Diagnostic("E_NO_NODES", f"pattern '{p.name}' declares no nodes"))
    roles = {n.role for n in p.nodes}
    seen = set()
    for n in p.nodes:
        if n.role in seen:
            out.append(Diagnostic("E_DUP_ROLE", f"duplicate role '{n.role}'"))
        seen.add(n.role)
        if n.kind not in ("access", "vicl", "evictor"):
            out.append(Diagnostic("E_ROLE_KIND", f"role '{n.role}': unknown kind '{n.kind}'"))
        for alt in n.alternatives:
            for op in alt.opcodes:
                if op not in OPCODE_NAMES:
                    out.append(Diagnostic("E_OPCODE", f"role '{n.role}': unknown opcode '{op}'"))
    for e in p.edges:
        for r in (e.src, e.dst):
            if r not in roles:
                out.append(Diagnostic("E_UNDECLARED_ROLE", f"edge names undeclared role '{r}'"))
    for a in p.absences:
        if a.role not in roles:
            out.append(Diagnostic("E_UNDECLARED_ROLE", f"absence names undeclared role '{a.role}'"))
    for c in p.constraints:
        for r in c[1:]:
            if r not in roles:
                out.append(Diagnostic("E_UNDECLARED_ROLE",
                                      f"constraint '{c[0]}' names undeclared role '{r}'"))
    return out


# ---------------------------------------------------------------------------
# Built-in patterns


def flush_reload_pattern() -> ThreatPattern:
    """Flush(or evict)-then-reload with a hitting reload.

    The attacker may start with the line of interest cached (optional initial
    pair), evicts it by flush or set collision, some secret-dependent access
    brings it back (a squashed speculative attacker access or a committed
    victim access), and the attacker's reload hits: no new pair for the
    reload.
    """
    return parse_pattern(builtin_pattern_text("flush_reload"))


def prime_probe_pattern() -> ThreatPattern:
    """Two consecutive same-address attacker reads with a missing probe.

    The probe instantiates a new pair because something secret-dependent
    ended the primed lifetime: a coherence invalidation from a (possibly
    squashed) remote write, a flush, or a set collision.
    """
    return parse_pattern(builtin_pattern_text("prime_probe"))


def builtin_pattern_text(which: str) -> str:
    if which not in BUILTIN_PATTERNS:
        raise ValueError(f"unknown builtin pattern '{which}'")
    return resources.files("uhbsynth.data").joinpath(f"{which}.threat").read_text("utf-8")


# ---------------------------------------------------------------------------
# Matching


def match(pattern: ThreatPattern, g: UhbGraph) -> list:
    """All embeddings of the pattern in one execution, deterministically ordered."""
    prog = g.program
    if prog is None:
        raise ValueError("graph carries no program")
    ctx = _Ctx(g)
    domains = []
    for role in pattern.roles:
        node = pattern.node(role)
        domains.append(_domain(ctx, node))
    out = []
    _assign(pattern, ctx, list(pattern.roles), domains, 0, {}, out)
    return out


class _Ctx:
    def __init__(self, g: UhbGraph):
        self.g = g
        self.prog = g.program
        self.reach = Reach(g)
        self.instrs = list(self.prog.instructions())
        self.by_id = {i.id: i for i in self.instrs}
        self.core = {}
        self.actor = {}
        for t in self.prog.threads:
            for i in t.instructions:
                self.core[i.id] = t.core
                self.actor[i.id] = t.actor
        self.vicls = g.vicls()

    def paddr(self, iid):
        i = self.by_id[iid]
        return self.prog.address_map.paddr(i.vaddr) if i.vaddr is not None else None

    def access_node(self, iid):
        return StageNode(iid, self.core[iid], self.g.access_stage)


def _domain(ctx: _Ctx, node: PatternNode):
    if node.kind == "vicl":
        vals = list(ctx.vicls)
        if node.optional:
            vals = [None] + vals
        return vals
    vals = []
    for i in ctx.instrs:
        if node.kind == "access" and not i.is_memory:
            continue
        if node.opcodes and i.opcode not in node.opcodes:
            continue
        if node.actor != "any" and ctx.actor[i.id] != node.actor:
            continue
        if node.commit == "committed" and not i.committed:
            continue
        if node.commit == "squashed" and not i.squashed:
            continue
        if node.alternatives and not any(_alt_ok(ctx, alt, i) for alt in node.alternatives):
            continue
        vals.append(i.id)
    if node.optional:
        vals = [None] + vals
    return vals


def _alt_ok(ctx: _Ctx, alt: Alternative, instr) -> bool:
    if ctx.actor[instr.id] != alt.actor:
        return False
    if alt.commit == "committed" and not instr.committed:
        return False
    if alt.commit == "squashed" and not instr.squashed:
        return False
    if alt.opcodes and instr.opcode not in alt.opcodes:
        return False
    if alt.needs_dep:
        if instr.dep_on is None:
            return False
        src = ctx.by_id[instr.dep_on]
        if src.opcode != "Read":
            return False
        if alt.commit == "squashed" and not src.squashed:
            return False
        if alt.commit == "committed" and not src.committed:
            return False
    return True


def _assign(pattern, ctx, roles, domains, idx, bound, out):
    if idx == len(roles):
        emb = _check_assignment(pattern, ctx, bound)
        if emb is not None:
            out.append(emb)
        return
    role = roles[idx]
    for val in domains[idx]:
        if val is not None and val in bound.values():
            continue  # injective over bound entities
        bound[role] = val
        _assign(pattern, ctx, roles, domains, idx + 1, bound, out)
        del bound[role]


def _role_pair(pattern, ctx, bound, role):
    """The lifetime a role stands for, honoring sourcing constraints."""
    node = pattern.node(role)
    val = bound.get(role)
    if val is None:
        return None
    if node.kind == "vicl":
        return val
    # a sourced_by constraint redirects: filler's pair is what the reader read
    for c in pattern.constraints:
        if c[0] == "sourced_by" and c[2] == role:
            reader = bound.get(c[1])
            if reader is None:
                return None
            return ctx.g.source_of(reader)
    src = ctx.g.source_of(val) if ctx.by_id[val].opcode == "Read" else None
    if src is not None and src.creator == val:
        return src
    created = ctx.g.created_by(val)
    return created[0] if created else None


def _point_node(pattern, ctx, bound, role, point):
    val = bound.get(role)
    if val is None:
        return None
    node = pattern.node(role)
    if point == "access":
        return ctx.access_node(val)
    if point == "event":
        instr = ctx.by_id[val]
        if instr.opcode == "Flush":
            return FlushNode(val, ctx.core[val], instr.vaddr)
        pair = _evictor_pair(ctx, val)
        return ViclNode("create", pair) if pair is not None else None
    pair = _role_pair(pattern, ctx, bound, role)
    if pair is None:
        return None
    return ViclNode("create" if point == "create" else "expire", pair)


def _evictor_pair(ctx, iid):
    created = ctx.g.created_by(iid)
    return created[0] if created else None


def _node_accepts(ctx, node, val) -> bool:
    """Full predicate check for one binding; domains only pre-filter."""
    if val is None:
        return node.optional
    if node.kind == "vicl":
        return isinstance(val, Vicl)
    if isinstance(val, Vicl):
        return False
    i = ctx.by_id[val]
    if node.kind == "access" and not i.is_memory:
        return False
    if node.opcodes and i.opcode not in node.opcodes:
        return False
    if node.actor != "any" and ctx.actor[i.id] != node.actor:
        return False
    if node.commit == "committed" and not i.committed:
        return False
    if node.commit == "squashed" and not i.squashed:
        return False
    if node.alternatives and not any(_alt_ok(ctx, alt, i) for alt in node.alternatives):
        return False
    return True


def _check_assignment(pattern, ctx, bound):
    g = ctx.g
    for n in pattern.nodes:
        if not _node_accepts(ctx, n, bound.get(n.role)):
            return None
    # address classes bind to one physical address each
    classes = {}
    for n in pattern.nodes:
        val = bound.get(n.role)
        if val is None or not n.addr_class:
            continue
        paddr = val.paddr if isinstance(val, Vicl) else ctx.paddr(val)
        if paddr is None:
            return None
        if classes.setdefault(n.addr_class, paddr) != paddr:
            return None
    # creates required/forbidden
    for n in pattern.nodes:
        val = bound.get(n.role)
        if val is None or n.kind != "access":
            continue
        created = g.created_by(val)
        if n.creates == "required" and not created:
            return None
        if n.creates == "forbidden" and created:
            return None
    for a in pattern.absences:
        val = bound.get(a.role)
        if val is not None and a.template == "new_vicl" and g.created_by(val):
            return None
    # vicl roles live in the cache of the first access-role core (the timing core)
    timing_core = None
    for n in pattern.nodes:
        if n.kind == "access" and bound.get(n.role) is not None:
            timing_core = ctx.core[bound[n.role]]
    for n in pattern.nodes:
        val = bound.get(n.role)
        if isinstance(val, Vicl) and timing_core is not None and val.core != timing_core:
            return None

    mechanism = ""
    for c in pattern.constraints:
        kind = c[0]
        if kind == "sourced_by":
            reader, filler = bound.get(c[1]), bound.get(c[2])
            if reader is None or filler is None:
                return None
            src = g.source_of(reader)
            if src is None or src.creator != filler:
                return None
        elif kind == "evicts":
            mech = _check_evicts(pattern, ctx, bound, c[1], c[2], classes)
            if mech is None:
                return None
            mechanism = mech
        elif kind == "consecutive":
            if not _check_consecutive(ctx, bound.get(c[1]), bound.get(c[2])):
                return None
        else:
            raise ValueError(f"unknown constraint '{kind}'")
    for e in pattern.edges:
        s = _point_node(pattern, ctx, bound, e.src, e.src_point)
        d = _point_node(pattern, ctx, bound, e.dst, e.dst_point)
        if s is None or d is None:
            if e.optional:
                continue
            return None
        if s != d and not ctx.reach.before(s, d):
            return None
        if s == d:
            return None
    bindings = tuple((r, bound.get(r)) for r in pattern.roles)
    return Embedding(pattern.name, bindings, mechanism)


def _check_evicts(pattern, ctx, bound, evictor_role, target_role, classes):
    """The evictor truly ended the target lifetime; returns the mechanism."""
    e = bound.get(evictor_role)
    if e is None:
        return None
    instr = ctx.by_id[e]
    target = bound.get(target_role)
    target_pair = _role_pair(pattern, ctx, bound, target_role) if target is not None else None
    if target_pair is None:
        # nothing to evict: only a flush of the class address starts the attack
        if instr.opcode != "Flush":
            return None
        addr = classes.get("A")
        if addr is not None and ctx.paddr(e) != addr:
            return None
        return "flush"
    cause = ctx.g.cause_of(target_pair)
    if cause[0] == CAUSE_FLUSHED and cause[1] == e:
        return "flush"
    if cause[0] == CAUSE_INVALIDATED and cause[1] == e:
        return "invalidation"
    if cause[0] == CAUSE_DISPLACED and cause[1].creator == e and cause[1].paddr != target_pair.paddr:
        return "collision"
    return None


def _check_consecutive(ctx, a, b):
    """a and b are one thread's accesses to one address with none between."""
    if a is None or b is None:
        return False
    pa, pb = ctx.paddr(a), ctx.paddr(b)
    if pa is None or pa != pb:
        return False
    for t in ctx.prog.threads:
        ids = [i.id for i in t.instructions]
        if a in ids and b in ids:
            ia, ib = ids.index(a), ids.index(b)
            if ia >= ib:
                return False
            for k in range(ia + 1, ib):
                mid = t.instructions[k]
                if mid.is_memory and ctx.paddr(mid.id) == pa:
                    return False
            return True
    return False


# ---------------------------------------------------------------------------
# Pattern files


def parse_pattern(text: str) -> ThreatPattern:
    name = None
    nodes, edges, absences, constraints = [], [], [], []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        kw = toks[0]
        if kw == "pattern":
            if len(toks) != 2:
                raise InputError(Diagnostic("E_SYNTAX", "pattern: expected one name", lineno, 1))
            name = toks[1]
        elif kw == "role":
            nodes.append(_parse_role(toks, lineno))
        elif kw == "edge":
            edges.append(_parse_edge(toks, lineno))
        elif kw == "absent":
            if len(toks) != 3:
                raise InputError(Diagnostic("E_SYNTAX", "absent: expected 'absent <template> <role>'", lineno, 1))
            absences.append(NodeAbsence(toks[2], toks[1]))
        elif kw == "constraint":
            if len(toks) != 4:
                raise InputError(Diagnostic("E_SYNTAX", "constraint: expected 'constraint <kind> <role> <role>'", lineno, 1))
            if toks[1] not in ("sourced_by", "evicts", "consecutive"):
                raise InputError(Diagnostic("E_SYNTAX", f"unknown constraint '{toks[1]}'", lineno, 1))
            constraints.append((toks[1], toks[2], toks[3]))
        else:
            raise InputError(Diagnostic("E_SYNTAX", f"unknown pattern declaration '{kw}'", lineno, 1))
    if name is None:
        raise InputError(Diagnostic("E_MISSING_DECL", "missing 'pattern' declaration"))
    p = ThreatPattern(
        name=name,
        nodes=tuple(nodes),
        edges=tuple(edges),
        absences=tuple(absences),
        constraints=tuple(constraints),
        roles=tuple(n.role for n in nodes),
    )
    diags = validate_pattern(p)
    if diags:
        raise InputError(diags)
    return p


def _parse_role(toks, lineno) -> PatternNode:
    if len(toks) < 3:
        raise InputError(Diagnostic("E_SYNTAX", "role: expected 'role <name> <kind> ...'", lineno, 1))
    role, kind = toks[1], toks[2]
    addr_class = ""
    optional = False
    actor, commit, creates = "any", "any", "any"
    opcodes = ()
    alternatives = []
    k = 3
    while k < len(toks):
        tok = toks[k]
        if tok == "optional":
            optional = True
        elif tok.startswith("addr="):
            addr_class = tok[5:]
        elif tok.startswith("actor="):
            actor = tok[6:]
        elif tok.startswith("commit="):
            commit = tok[7:]
        elif tok.startswith("creates="):
            creates = tok[8:]
        elif tok.startswith("opcodes="):
            opcodes = tuple(tok[8:].split(","))
        elif tok == "alt":
            alt, k = _parse_alt(toks, k + 1, lineno)
            alternatives.append(alt)
            continue
        else:
            raise InputError(Diagnostic("E_SYNTAX", f"role: unknown attribute '{tok}'", lineno, 1))
        k += 1
    return PatternNode(role, kind, addr_class, optional, actor, commit,
                       opcodes, creates, tuple(alternatives))


def _parse_alt(toks, k, lineno):
    if k + 1 >= len(toks):
        raise InputError(Diagnostic("E_SYNTAX", "alt: expected '<actor> <commit> [opcodes=..] [dep]'", lineno, 1))
    actor, commit = toks[k], toks[k + 1]
    k += 2
    opcodes = ()
    needs_dep = False
    while k < len(toks) and toks[k] != "alt":
        tok = toks[k]
        if tok.startswith("opcodes="):
            opcodes = tuple(tok[8:].split(","))
        elif tok == "dep":
            needs_dep = True
        else:
            break
        k += 1
    return Alternative(actor, commit, opcodes, needs_dep), k


def _parse_edge(toks, lineno) -> PatternEdge:
    # edge a.point -> b.point [optional]
    if len(toks) not in (4, 5) or toks[2] != "->":
        raise InputError(Diagnostic("E_SYNTAX", "edge: expected 'edge a.point -> b.point'", lineno, 1))
    try:
        src, src_point = toks[1].split(".", 1)
        dst, dst_point = toks[3].split(".", 1)
    except ValueError:
        raise InputError(Diagnostic("E_SYNTAX", "edge: endpoints must be role.point", lineno, 1))
    optional = len(toks) == 5 and toks[4] == "optional"
    for point in (src_point, dst_point):
        if point not in ("create", "expire", "access", "event"):
            raise InputError(Diagnostic("E_SYNTAX", f"edge: unknown point '{point}'", lineno, 1))
    return PatternEdge(src, src_point, dst, dst_point, optional)


def render_pattern(p: ThreatPattern) -> str:
    lines = [f"pattern {p.name}"]
    for n in p.nodes:
        parts = [f"role {n.role} {n.kind}"]
        if n.addr_class:
            parts.append(f"addr={n.addr_class}")
        if n.optional:
            parts.append("optional")
        if n.actor != "any":
            parts.append(f"actor={n.actor}")
        if n.commit != "any":
            parts.append(f"commit={n.commit}")
        if n.opcodes:
            parts.append("opcodes=" + ",".join(n.opcodes))
        if n.creates != "any":
            parts.append(f"creates={n.creates}")
        for alt in n.alternatives:
            piece = f"alt {alt.actor} {alt.commit}"
            if alt.opcodes:
                piece += " opcodes=" + ",".join(alt.opcodes)
            if alt.needs_dep:
                piece += " dep"
            parts.append(piece)
        lines.append(" ".join(parts))
    for e in p.edges:
        line = f"edge {e.src}.{e.src_point} -> {e.dst}.{e.dst_point}"
        if e.optional:
            line += " optional"
        lines.append(line)
    for a in p.absences:
        lines.append(f"absent {a.template} {a.role}")
    for c in p.constraints:
        lines.append(f"constraint {c[0]} {c[1]} {c[2]}")
    return "\n".join(lines) + "\n"

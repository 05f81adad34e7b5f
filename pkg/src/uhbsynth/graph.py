"""Happens-before execution graphs.

Nodes are pipeline stage events, cache line lifetime events (a create/expire
pair per value-in-cache lifetime), coherence invalidation send/receive events,
flush completion events, and speculation resolution events.  Edges are
happens-before orderings in logical time; an acyclic edge set is an observable
execution.

Expiry causes are carried as explicit graph metadata: every lifetime records
whether it ended because the line was displaced, invalidated, flushed, or
simply outlived the program.  Pattern matching uses them to decide whether a
candidate evictor actually caused an eviction.
"""

from dataclasses import dataclass

# Expiry cause tags.
CAUSE_DISPLACED = "displaced"      # ("displaced", vicl)  the pair that took the line
CAUSE_INVALIDATED = "invalidated"  # ("invalidated", writer instr id)
CAUSE_FLUSHED = "flushed"          # ("flushed", flush instr id)
CAUSE_FINAL = "final"              # ("final",)  expires after the program


@dataclass(frozen=True, order=True)
class Vicl:
    """Identity of one value-in-cache lifetime (create/expire pair)."""

    core: int
    paddr: str
    instance: int    # per (core, paddr), in line order
    creator: int     # instruction id whose access instantiated the pair
    kind: str        # "fill" (read-style, clean) or "write" (store data)

    def brief(self) -> str:
        return f"c{self.core}:{self.paddr}#{self.instance}"


@dataclass(frozen=True, order=True)
class StageNode:
    instr: int
    core: int
    stage: str

    def key(self):
        return (0, self.core, self.instr, self.stage)

    def label(self) -> str:
        return f"i{self.instr}.{self.stage}"


@dataclass(frozen=True, order=True)
class ResolveNode:
    """Branch resolution / permission check completion of a speculation guard."""

    instr: int
    core: int

    def key(self):
        return (1, self.core, self.instr, "")

    def label(self) -> str:
        return f"i{self.instr}.Resolve"


@dataclass(frozen=True, order=True)
class ViclNode:
    event: str   # "create" | "expire"
    vicl: Vicl

    def key(self):
        return (2 if self.event == "create" else 3, self.vicl.core, self.vicl.paddr,
                self.vicl.instance, self.vicl.creator)

    def label(self) -> str:
        word = "Create" if self.event == "create" else "Expire"
        return f"{word}({self.vicl.brief()})"


@dataclass(frozen=True, order=True)
class InvSendNode:
    writer: int   # write instruction id
    core: int     # requesting core
    paddr: str

    def key(self):
        return (4, self.core, self.writer, self.paddr)

    def label(self) -> str:
        return f"InvSend(i{self.writer},{self.paddr})"


@dataclass(frozen=True, order=True)
class InvRecvNode:
    writer: int
    core: int     # target core
    paddr: str

    def key(self):
        return (5, self.core, self.writer, self.paddr)

    def label(self) -> str:
        return f"InvRecv(i{self.writer},c{self.core},{self.paddr})"


@dataclass(frozen=True, order=True)
class FlushNode:
    """Completion event of a flush instruction."""

    instr: int
    core: int
    vaddr: str

    def key(self):
        return (6, self.core, self.instr, self.vaddr)

    def label(self) -> str:
        return f"Flush(i{self.instr},{self.vaddr})"


def node_key(node):
    return node.key()


@dataclass(frozen=True)
class UhbGraph:
    """One happens-before execution of a program on a machine."""

    nodes: tuple            # sorted by node_key
    edges: tuple            # of (src, dst, label), sorted
    sourcing: tuple         # of (read instr id, Vicl) the read's value came from
    expire_causes: tuple    # of (Vicl, cause tuple)
    vicl_values: tuple      # of (Vicl, value)
    program: object = None  # the LitmusProgram this execution belongs to
    access_stage: str = "Execute"

    def vicls(self):
        seen = []
        for n in self.nodes:
            if isinstance(n, ViclNode) and n.event == "create":
                seen.append(n.vicl)
        return seen

    def source_of(self, read_id: int):
        for iid, v in self.sourcing:
            if iid == read_id:
                return v
        return None

    def cause_of(self, vicl: Vicl):
        for v, c in self.expire_causes:
            if v == vicl:
                return c
        return (CAUSE_FINAL,)

    def value_of(self, vicl: Vicl) -> int:
        for v, val in self.vicl_values:
            if v == vicl:
                return val
        return 0

    def created_by(self, instr_id: int):
        return [v for v in self.vicls() if v.creator == instr_id]

    def dedup_key(self):
        return (self.nodes, self.edges, self.sourcing, self.expire_causes, self.vicl_values)


class Reach:
    """Transitive happens-before reachability over a graph's edges."""

    def __init__(self, graph: UhbGraph):
        self.adj = {}
        for src, dst, _ in graph.edges:
            self.adj.setdefault(src, set()).add(dst)
        self._memo = {}

    def before(self, a, b) -> bool:
        """True iff a happens before b (a path a -> b exists)."""
        if a == b:
            return False
        return b in self.closure(a)

    def closure(self, a):
        hit = self._memo.get(a)
        if hit is not None:
            return hit
        seen = set()
        stack = [a]
        while stack:
            n = stack.pop()
            for m in self.adj.get(n, ()):
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        self._memo[a] = seen
        return seen


def check_acyclic(graph: UhbGraph) -> bool:
    """True iff the edge relation has no cycle."""
    return acyclic(graph.nodes, [(s, d) for s, d, _ in graph.edges])


def acyclic(nodes, arcs) -> bool:
    indeg = {n: 0 for n in nodes}
    adj = {n: [] for n in nodes}
    for s, d in arcs:
        if s not in indeg or d not in indeg:
            continue
        indeg[d] += 1
        adj[s].append(d)
    queue = [n for n, d in indeg.items() if d == 0]
    seen = 0
    while queue:
        n = queue.pop()
        seen += 1
        for m in adj[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    return seen == len(indeg)


def check_vicl_pairing(graph: UhbGraph) -> bool:
    """Every create has exactly one expire (and vice versa) with a create->expire edge."""
    creates = {n.vicl for n in graph.nodes if isinstance(n, ViclNode) and n.event == "create"}
    expires = {n.vicl for n in graph.nodes if isinstance(n, ViclNode) and n.event == "expire"}
    if creates != expires:
        return False
    edgeset = {(s, d) for s, d, _ in graph.edges}
    return all((ViclNode("create", v), ViclNode("expire", v)) in edgeset for v in creates)


def check_swmr(graph: UhbGraph) -> bool:
    """Single-writer-multiple-reader: a write pair's lifetime never overlaps a
    live pair for the same address in another core's cache."""
    reach = Reach(graph)
    vicls = graph.vicls()
    for w in vicls:
        if w.kind != "write":
            continue
        for v in vicls:
            if v is w or v.paddr != w.paddr or v.core == w.core:
                continue
            w_exp, w_cre = ViclNode("expire", w), ViclNode("create", w)
            v_exp, v_cre = ViclNode("expire", v), ViclNode("create", v)
            if not (reach.before(w_exp, v_cre) or reach.before(v_exp, w_cre)):
                return False
    return True


def check_dv(graph: UhbGraph, prog) -> bool:
    """Data-value invariant: every fill carries the value left by the latest
    write pair ordered before it (or the initial value)."""
    reach = Reach(graph)
    vicls = graph.vicls()
    for v in vicls:
        if v.kind != "fill":
            continue
        expected = _value_before(graph, reach, vicls, v, prog)
        if expected is None or graph.value_of(v) != expected:
            return False
    for iid, v in graph.sourcing:
        # a read's source must itself be a pair for the read's address
        instr = prog.instruction(iid)
        if prog.address_map.paddr(instr.vaddr) != v.paddr:
            return False
    return True


def _value_before(graph: UhbGraph, reach: Reach, vicls, v: Vicl, prog):
    """Value of the last write pair whose lifetime precedes v's creation."""
    prior = [w for w in vicls
             if w.kind == "write" and w.paddr == v.paddr
             and reach.before(ViclNode("expire", w), ViclNode("create", v))]
    if not prior:
        return prog.initial_value(v.paddr)
    last = [w for w in prior
            if all(u is w or reach.before(ViclNode("expire", u), ViclNode("create", w))
                   for u in prior)]
    if len(last) != 1:
        return None  # writes not totally ordered: no well-defined last value
    return graph.value_of(last[0])

"""Enumerate the happens-before executions of a program on a machine.

Per execution the engine chooses, for every memory access, whether it hits an
existing lifetime or instantiates a new one; orders the lifetimes occupying
each cache line; assigns every lifetime an expiry cause (displacement,
invalidation, flush, or end of program); places invalidation receives and
flush completions relative to the lifetimes they may kill; and picks one
disjunct per applicable axiom.  Choice combinations whose edge set is cyclic
are discarded.  The returned list is in deterministic generation order, which
is the canonical order used everywhere else.

Structural rules (not expressible as axioms) implemented here:
  - a read hits iff a live same-address lifetime exists in its own cache;
    lines never spontaneously evict, so a miss needs a caused expiry first
  - cross-core hits only on clean fills brought in by committed reads;
    dirty or exclusively-held remote lines are served as misses
  - a squashed write never deposits its value; with write-allocate its
    ownership request still fills the line (with the old value) and, under an
    invalidation-based protocol with visible speculative requests, still
    invalidates remote copies
  - everything a squashed instruction did in the cache system happens before
    its guard's resolution event

Internally nodes are interned to integers per candidate program; graph
objects are only materialized for the acyclic survivors.
"""

from itertools import permutations, product

from uhbsynth.graph import (
    CAUSE_DISPLACED,
    CAUSE_FINAL,
    CAUSE_FLUSHED,
    CAUSE_INVALIDATED,
    FlushNode,
    InvRecvNode,
    InvSendNode,
    ResolveNode,
    StageNode,
    UhbGraph,
    Vicl,
    ViclNode,
    node_key,
)
from uhbsynth.litmus import LitmusProgram, well_formed
from uhbsynth.machine import MicroarchSpec


class _Info:
    """Static per-program facts shared by every execution choice."""

    def __init__(self, spec: MicroarchSpec, prog: LitmusProgram):
        self.spec = spec
        self.prog = prog
        self.acc = spec.access_stage
        self.first_stage = spec.stages[0]
        self.commit_stage = spec.stages[-1]
        self.instrs = list(prog.instructions())
        self.core = {}
        self.actor = {}
        self.order = {}  # id -> (thread index, position)
        for tx, t in enumerate(prog.threads):
            for k, i in enumerate(t.instructions):
                self.core[i.id] = t.core
                self.actor[i.id] = t.actor
                self.order[i.id] = (tx, k)
        self.paddr = {}
        self.setix = {}
        for i in self.instrs:
            if i.vaddr is not None:
                self.paddr[i.id] = prog.address_map.paddr(i.vaddr)
                self.setix[i.id] = prog.address_map.set_index(i.vaddr)
        self.legal = {i.id: prog.is_legal(i) for i in self.instrs}
        self.root = {i.id: self._root_guard(i) for i in self.instrs}
        self.guard_ids = sorted({r for r in self.root.values() if r is not None})
        self.by_id = {i.id: i for i in self.instrs}
        self.inv_based = spec.coherence.kind == "invalidation_based"
        self.spec_writes_visible = spec.coherence.speculative_write_requests_visible

    def _root_guard(self, instr):
        seen = set()
        cur = instr
        while cur.speculative_under is not None and cur.speculative_under != cur.id:
            if cur.id in seen:
                return None
            seen.add(cur.id)
            cur = self.prog.instruction(cur.speculative_under)
            if cur.opcode == "Branch":
                return cur.id
        if instr.speculative_under is None:
            return None
        return cur.id

    def matched_bindings(self):
        """(axiom, env) for every binding whose predicates hold; choice-free."""
        out = []
        ids = [i.id for i in self.instrs]
        for ax in self.spec.axioms:
            bindings = [(a,) for a in ids] if len(ax.variables) == 1 else \
                       [(a, b) for a in ids for b in ids]
            for binding in bindings:
                env = dict(zip(ax.variables, binding))
                if all(_pred(self, p, env) for p in ax.predicates):
                    out.append((ax, env))
        return out

    def po(self, a: int, b: int) -> bool:
        ta, ka = self.order[a]
        tb, kb = self.order[b]
        return ta == tb and ka < kb

    def stages_of(self, instr):
        if instr.squashed:
            return self.spec.stages[:-1]
        return self.spec.stages

    def sends_invalidation(self, instr) -> bool:
        if instr.opcode != "Write" or not self.inv_based:
            return False
        return instr.committed or self.spec_writes_visible


class _Static:
    """Choice-free node interning and edges, shared by every execution."""

    def __init__(self, info: _Info):
        self.info = info
        self.nodes = []
        self._stage_idx = {}
        self._resolve_idx = {}
        self._flush_idx = {}
        for i in info.instrs:
            for s in info.stages_of(i):
                self._stage_idx[(i.id, s)] = len(self.nodes)
                self.nodes.append(StageNode(i.id, info.core[i.id], s))
        for g in info.guard_ids:
            self._resolve_idx[g] = len(self.nodes)
            self.nodes.append(ResolveNode(g, info.core[g]))
        for f in info.instrs:
            if f.opcode == "Flush":
                self._flush_idx[f.id] = len(self.nodes)
                self.nodes.append(FlushNode(f.id, info.core[f.id], f.vaddr))
        self.access_idx = {i.id: self._stage_idx[(i.id, info.acc)] for i in info.instrs}
        self.bindings = info.matched_bindings()
        self.edges = self._static_edges()

    def _static_edges(self):
        info = self.info
        edges = []
        for i in info.instrs:
            if i.dep_on is not None:
                edges.append((self.access_idx[i.dep_on], self.access_idx[i.id], "dep"))
        for g in info.guard_ids:
            res = self._resolve_idx[g]
            edges.append((self.access_idx[g], res, "resolve"))
            gi = info.by_id[g]
            if gi.committed:
                edges.append((res, self._stage_idx[(g, info.commit_stage)], "resolve"))
        for i in info.instrs:
            if not i.squashed:
                continue
            root = info.root[i.id]
            if root is not None and root != i.id and i.opcode != "Branch":
                edges.append((self.access_idx[i.id], self._resolve_idx[root], "squash"))
        for f in info.instrs:
            if f.opcode != "Flush":
                continue
            fl = self._flush_idx[f.id]
            edges.append((self.access_idx[f.id], fl, "flush"))
            if f.squashed and info.root[f.id] is not None:
                edges.append((fl, self._resolve_idx[info.root[f.id]], "squash"))
        return edges


class _Universe:
    """The static nodes extended with one pair set's lifetimes and coherence
    events."""

    def __init__(self, static: _Static, pairs):
        info = static.info
        self.info = info
        self.static = static
        self.pairs = pairs
        self.nodes = list(static.nodes)
        self._pair_idx = {}
        for pair in sorted(pairs):
            self._pair_idx[pair] = len(self.nodes)
            self.nodes.append(("create", pair))
            self.nodes.append(("expire", pair))
        self.send_targets = {}
        self._send_idx = {}
        self._recv_idx = {}
        for w in info.instrs:
            if not info.sends_invalidation(w):
                continue
            targets = sorted({info.core[p[0]] for p in pairs
                              if info.paddr[p[0]] == info.paddr[w.id]
                              and info.core[p[0]] != info.core[w.id]})
            if targets:
                self.send_targets[w.id] = targets
                self._send_idx[w.id] = len(self.nodes)
                self.nodes.append(InvSendNode(w.id, info.core[w.id], info.paddr[w.id]))
                for t in targets:
                    self._recv_idx[(w.id, t)] = len(self.nodes)
                    self.nodes.append(InvRecvNode(w.id, t, info.paddr[w.id]))

    def stage(self, iid, stage):
        return self.static._stage_idx.get((iid, stage))

    def access(self, iid):
        return self.static.access_idx[iid]

    def create(self, pair):
        return self._pair_idx[pair]

    def expire(self, pair):
        return self._pair_idx[pair] + 1

    def resolve(self, iid):
        return self.static._resolve_idx.get(iid)

    def send(self, iid):
        return self._send_idx.get(iid)

    def recv(self, wid, core):
        return self._recv_idx.get((wid, core))

    def flush_event(self, iid):
        return self.static._flush_idx.get(iid)


def enumerate_executions(spec: MicroarchSpec, prog: LitmusProgram, notes=None):
    """All distinct consistent executions, in canonical (generation) order."""
    ok, diags = well_formed(prog, spec)
    if not ok:
        raise ValueError("program is not well-formed: " + "; ".join(str(d) for d in diags))
    return list(iter_executions(spec, prog, notes))


def iter_executions(spec: MicroarchSpec, prog: LitmusProgram, notes=None):
    """Generator form of enumerate_executions (same order, deduplicated)."""
    info = _Info(spec, prog)
    seen = set()
    for graph in _executions(info, notes):
        key = graph.dedup_key()
        if key in seen:
            continue
        seen.add(key)
        yield graph


def _executions(info: _Info, notes):
    accesses = [i for i in info.instrs if i.is_memory]
    option_lists = [_access_options(info, a) for a in accesses]
    static = _Static(info)
    for combo in product(*option_lists):
        choice = {a.id: c for a, c in zip(accesses, combo)}
        pairs = _derive_pairs(info, choice)
        if pairs is None:
            continue
        uni = _Universe(static, pairs)
        axiom_insts = _instantiate_axioms(info, uni, notes)
        if axiom_insts is None:
            continue
        base = _base_edges(info, uni, choice)
        yield from _with_line_orders(info, uni, choice, pairs, base, axiom_insts)


def _access_options(info: _Info, instr):
    """Hit-source candidates plus the miss option for one memory access."""
    opts = []
    pid = info.paddr[instr.id]
    for c in info.instrs:
        if c.id == instr.id or not c.is_memory or info.paddr.get(c.id) != pid:
            continue
        same_core = info.core[c.id] == info.core[instr.id]
        if same_core:
            if not info.po(c.id, instr.id):
                continue  # a line cannot be consumed before its own access initiated it
            if c.opcode == "Read":
                opts.append(("hit", c.id, "fill"))
            else:
                if c.committed:
                    opts.append(("hit", c.id, "write"))
                if info.spec.write_allocate:
                    opts.append(("hit", c.id, "fill"))
        else:
            if instr.opcode != "Read":
                continue  # remote lines grant no write hits without ownership transfer
            if c.opcode == "Read" and c.committed:
                opts.append(("hit", c.id, "fill"))
    opts.append(("miss",))
    return opts


def _derive_pairs(info: _Info, choice):
    """Pair descriptors (creator id, kind) existing under this hit/miss choice."""
    pairs = set()
    for i in info.instrs:
        if not i.is_memory:
            continue
        missed = choice[i.id][0] == "miss"
        if i.opcode == "Read":
            if missed:
                pairs.add((i.id, "fill"))
        else:
            if i.committed:
                pairs.add((i.id, "write"))
            if missed and info.spec.write_allocate:
                pairs.add((i.id, "fill"))
    for i in info.instrs:
        if i.is_memory and choice[i.id][0] == "hit":
            _, c, kind = choice[i.id]
            if (c, kind) not in pairs:
                return None  # hit target does not exist under this assignment
    return pairs


def _pair_line(info: _Info, pair):
    creator, _ = pair
    return (info.core[creator], info.setix[creator])


def _base_edges(info: _Info, uni: _Universe, choice):
    """Int edges independent of line order, cause, and event placement."""
    edges = list(uni.static.edges)
    for i in info.instrs:
        if i.dep_on is None:
            continue
        d_acc = uni.access(i.dep_on)
        for kind in ("fill", "write"):
            if (i.id, kind) in uni.pairs:
                edges.append((d_acc, uni.create((i.id, kind)), "dep"))
    for pair in uni.pairs:
        creator, kind = pair
        cre = uni.create(pair)
        edges.append((uni.stage(creator, info.first_stage), cre, "anchor"))
        if kind == "write":
            edges.append((uni.stage(creator, info.commit_stage), cre, "anchor"))
        else:
            # the fill satisfies its own access: alive from before the access
            # until at least the access itself
            edges.append((cre, uni.access(creator), "fill"))
            edges.append((uni.access(creator), uni.expire(pair), "fill"))
    for i in info.instrs:
        if not i.is_memory:
            continue
        ch = choice[i.id]
        if ch[0] == "hit":
            src = (ch[1], ch[2])
            edges.append((uni.create(src), uni.access(i.id), "source"))
            if i.opcode == "Read":
                edges.append((uni.access(i.id), uni.expire(src), "source"))
    # invalidation sends are anchored here; their ordering against lifetimes
    # is placed per execution
    for w in info.instrs:
        snd = uni.send(w.id)
        if snd is not None:
            edges.append((uni.access(w.id), snd, "inv"))
            if w.squashed and info.root[w.id] is not None:
                edges.append((snd, uni.resolve(info.root[w.id]), "squash"))
            for t in uni.send_targets[w.id]:
                edges.append((snd, uni.recv(w.id, t), "inv"))
    return edges


def _with_line_orders(info, uni, choice, pairs, base, axiom_insts):
    lines = {}
    for pair in sorted(pairs):
        lines.setdefault(_pair_line(info, pair), []).append(pair)
    adjacency = _adjacency_constraints(info, choice, pairs)
    line_ids = sorted(lines)
    per_line = [_line_perms(lines[lid], adjacency) for lid in line_ids]
    for combo in product(*per_line):
        order = dict(zip(line_ids, combo))
        if not _orders_ok(info, choice, order):
            continue
        octx = _OrderCtx(info, uni, order)
        yield from _with_causes(info, uni, choice, pairs, base, axiom_insts, order, octx)


class _OrderCtx:
    """Node translation fixed once a line order (hence instance numbering) is
    chosen: int index -> final node, plus ranks for fast edge sorting."""

    def __init__(self, info, uni, order):
        self.vicl_of = _number_instances(info, order)
        translated = []
        for node in uni.nodes:
            if isinstance(node, tuple):
                translated.append(ViclNode(node[0], self.vicl_of[node[1]]))
            else:
                translated.append(node)
        self.translated = translated
        by_rank = sorted(range(len(translated)), key=lambda k: node_key(translated[k]))
        self.rank = [0] * len(translated)
        for pos, k in enumerate(by_rank):
            self.rank[k] = pos
        self.node_tuple = tuple(translated[k] for k in by_rank)
        self.line_edges = []
        for seq in order.values():
            for v, u in zip(seq, seq[1:]):
                self.line_edges.append((uni.expire(v), uni.create(u), "line"))
        for pair in uni.pairs:
            self.line_edges.append((uni.create(pair), uni.expire(pair), "pair"))


def _adjacency_constraints(info, choice, pairs):
    """(a, b): a must immediately precede b on their line."""
    adj = []
    for i in info.instrs:
        if i.opcode != "Write":
            continue
        if (i.id, "fill") in pairs and (i.id, "write") in pairs:
            adj.append(((i.id, "fill"), (i.id, "write")))
        if choice[i.id][0] == "hit" and (i.id, "write") in pairs:
            target = (choice[i.id][1], choice[i.id][2])
            adj.append((target, (i.id, "write")))
    return adj


def _line_perms(line_pairs, adjacency):
    if len(line_pairs) == 1:
        return [tuple(line_pairs)]
    out = []
    relevant = [(a, b) for a, b in adjacency if a in line_pairs and b in line_pairs]
    for perm in permutations(line_pairs):
        ok = True
        for a, b in relevant:
            ia, ib = perm.index(a), perm.index(b)
            if ib != ia + 1:
                ok = False
                break
        if ok:
            out.append(perm)
    return out


def _orders_ok(info, choice, order):
    """Same-address displacement is only legal for an overwriting store."""
    for seq in order.values():
        for v, u in zip(seq, seq[1:]):
            if info.paddr[v[0]] == info.paddr[u[0]] and u[1] != "write":
                if not _killers_exist(info, v):
                    return False
    return True


def _killers_exist(info, pair):
    pid = info.paddr[pair[0]]
    core = info.core[pair[0]]
    for w in info.instrs:
        if w.opcode == "Write" and info.paddr[w.id] == pid and info.core[w.id] != core \
                and info.sends_invalidation(w):
            return True
    for f in info.instrs:
        if f.opcode == "Flush" and info.paddr[f.id] == pid:
            return True
    return False


def _with_causes(info, uni, choice, pairs, base, axiom_insts, order, octx):
    succ = {}
    for seq in order.values():
        for v, u in zip(seq, seq[1:]):
            succ[v] = u
    pair_list = sorted(pairs)
    options = []
    for v in pair_list:
        opts = []
        u = succ.get(v)
        if u is not None:
            if info.paddr[v[0]] != info.paddr[u[0]] or u[1] == "write":
                opts.append((CAUSE_DISPLACED, u))
        else:
            opts.append((CAUSE_FINAL,))
        vid, core = v[0], info.core[v[0]]
        for w in info.instrs:
            if (w.opcode == "Write" and info.paddr[w.id] == info.paddr[vid]
                    and info.core[w.id] != core and info.sends_invalidation(w)):
                opts.append((CAUSE_INVALIDATED, w.id))
        for f in info.instrs:
            if f.opcode == "Flush" and info.paddr[f.id] == info.paddr[vid]:
                opts.append((CAUSE_FLUSHED, f.id))
        if not opts:
            return
        options.append(opts)
    for combo in product(*options):
        causes = dict(zip(pair_list, combo))
        if not _causes_ok(info, causes, order):
            continue
        yield from _with_events(info, uni, choice, pairs, base, axiom_insts, order,
                                causes, octx)


def _causes_ok(info, causes, order):
    # one invalidation or flush kills at most one lifetime per cache line
    for seq in order.values():
        kills = set()
        for v in seq:
            c = causes[v]
            if c[0] in (CAUSE_INVALIDATED, CAUSE_FLUSHED):
                key = (c[0], c[1])
                if key in kills:
                    return False
                kills.add(key)
    # a same-address refill by a non-write pair requires a killed predecessor
    for seq in order.values():
        for v, u in zip(seq, seq[1:]):
            same = info.paddr[v[0]] == info.paddr[u[0]]
            if same and u[1] != "write" and causes[v][0] == CAUSE_DISPLACED:
                return False
    return True


def _with_events(info, uni, choice, pairs, base, axiom_insts, order, causes, octx):
    """Place invalidation receives and flush completions, then close out."""
    event_specs = []
    for w in info.instrs:
        if w.id not in uni.send_targets:
            continue
        per_core = []
        for t in uni.send_targets[w.id]:
            sub = []
            for l, seq in order.items():
                if l[0] != t:
                    continue
                part = [v for v in seq if info.paddr[v[0]] == info.paddr[w.id]]
                if part:
                    sub = part
            killed = [v for v in sub
                      if causes[v] == (CAUSE_INVALIDATED, w.id)]
            if killed:
                per_core.append([(t, sub, sub.index(killed[0]), True)])
            else:
                per_core.append([(t, sub, g, False) for g in range(len(sub) + 1)])
        event_specs.append(("inv", w.id, per_core))
    for f in info.instrs:
        if f.opcode != "Flush":
            continue
        per_core = []
        cores = sorted({l[0] for l in order})
        for t in cores:
            sub = []
            for l, seq in order.items():
                if l[0] != t:
                    continue
                part = [v for v in seq if info.paddr[v[0]] == info.paddr[f.id]]
                if part:
                    sub = part
            if not sub:
                continue
            killed = [v for v in sub if causes[v] == (CAUSE_FLUSHED, f.id)]
            if killed:
                per_core.append([(t, sub, sub.index(killed[0]), True)])
            else:
                per_core.append([(t, sub, g, False) for g in range(len(sub) + 1)])
        event_specs.append(("flush", f.id, per_core))

    flat = []
    slots = []
    for kind, iid, per_core in event_specs:
        for opts in per_core:
            flat.append(opts)
            slots.append((kind, iid))

    for combo in product(*flat):
        edges = list(base)
        for (kind, iid), pick in zip(slots, combo):
            if kind == "inv":
                _inv_edges(info, uni, iid, pick, edges)
            else:
                _flush_edges(info, uni, iid, pick, edges)
        yield from _finalize(info, uni, choice, causes, edges, axiom_insts, octx)


def _inv_edges(info, uni, wid, pick, edges):
    core, sub, point, kill = pick
    recv = uni.recv(wid, core)
    has_value = (wid, "write") in uni.pairs
    wv_create = uni.create((wid, "write")) if has_value else None
    wv_expire = uni.expire((wid, "write")) if has_value else None
    if kill:
        for k, v in enumerate(sub):
            if k < point:
                edges.append((uni.expire(v), recv, "inv"))
            elif k == point:
                edges.append((uni.create(v), recv, "inv"))
                edges.append((recv, uni.expire(v), "inv"))
            else:
                edges.append((recv, uni.create(v), "inv"))
        before = point + 1
    else:
        for k, v in enumerate(sub):
            if k < point:
                edges.append((uni.expire(v), recv, "inv"))
            else:
                edges.append((recv, uni.create(v), "inv"))
        before = point
    if has_value:
        # the writer's own lifetime never overlaps a remote one (SWMR)
        for k, v in enumerate(sub):
            if k < before:
                edges.append((uni.expire(v), wv_create, "excl"))
            else:
                edges.append((wv_expire, uni.create(v), "excl"))


def _flush_edges(info, uni, fid, pick, edges):
    core, sub, point, kill = pick
    fl = uni.flush_event(fid)
    if kill:
        for k, v in enumerate(sub):
            if k <= point:
                edges.append((uni.expire(v), fl, "flush"))
            else:
                edges.append((fl, uni.create(v), "flush"))
        edges.append((uni.access(fid), uni.expire(sub[point]), "flush"))
    else:
        for k, v in enumerate(sub):
            if k < point:
                edges.append((uni.expire(v), fl, "flush"))
            else:
                edges.append((fl, uni.create(v), "flush"))


def _instantiate_axioms(info: _Info, uni: _Universe, notes):
    """Per matched (axiom, binding): list of disjunct int-edge lists; None if
    some binding has no satisfiable disjunct."""
    insts = []
    for ax, env in uni.static.bindings:
        disjuncts = []
        for disjunct in ax.body:
            resolved = []
            sat = True
            for assertion in disjunct:
                s = _resolve_template(info, uni, assertion.src, env)
                d = _resolve_template(info, uni, assertion.dst, env)
                if s is None or d is None:
                    continue  # event absent in this execution: vacuous
                if s == d:
                    sat = False
                    break
                resolved.append((s, d, ax.name))
            if sat:
                disjuncts.append(resolved)
        if not disjuncts:
            if notes is not None:
                notes.append(f"axiom '{ax.name}' has no satisfiable disjunct for "
                             f"instructions {tuple(env.values())}")
            return None
        if len(disjuncts) == 1:
            if disjuncts[0]:
                insts.append(disjuncts)
        else:
            insts.append(disjuncts)
    return insts


def _pred(info: _Info, p, env):
    a = env[p.args[0]]
    b = env[p.args[1]] if len(p.args) > 1 else None
    ia = info.by_id[a]
    name = p.name
    if name == "po":
        return info.po(a, b)
    if name == "same_core":
        return info.core[a] == info.core[b]
    if name == "diff_core":
        return info.core[a] != info.core[b]
    if name == "same_vaddr":
        return (info.by_id[a].vaddr is not None and info.by_id[b].vaddr is not None
                and info.by_id[a].vaddr == info.by_id[b].vaddr)
    if name == "diff_vaddr":
        return (info.by_id[a].vaddr is not None and info.by_id[b].vaddr is not None
                and info.by_id[a].vaddr != info.by_id[b].vaddr)
    if name == "same_paddr":
        return (a in info.paddr and b in info.paddr and info.paddr[a] == info.paddr[b])
    if name == "diff_paddr":
        return (a in info.paddr and b in info.paddr and info.paddr[a] != info.paddr[b])
    if name == "same_set":
        return (a in info.setix and b in info.setix and info.setix[a] == info.setix[b])
    if name == "data_dep":
        return info.by_id[b].dep_on == a
    if name == "guards":
        return a != b and info.root[b] == a
    if name == "is_read":
        return ia.opcode == "Read"
    if name == "is_write":
        return ia.opcode == "Write"
    if name == "is_flush":
        return ia.opcode == "Flush"
    if name == "is_fence":
        return ia.opcode == "Fence"
    if name == "is_branch":
        return ia.opcode == "Branch"
    if name == "is_memory":
        return ia.is_memory
    if name == "is_guard":
        return a in info.guard_ids
    if name == "committed":
        return ia.committed
    if name == "squashed":
        return ia.squashed
    if name == "legal":
        return info.legal[a]
    if name == "illegal":
        return ia.is_memory and not info.legal[a]
    raise ValueError(f"unknown predicate {name}")


def _resolve_template(info: _Info, uni: _Universe, tpl, env):
    iid = env[tpl.var]
    instr = info.by_id[iid]
    point = tpl.point
    if point in info.spec.stages:
        return uni.stage(iid, point)
    if point == "Resolve":
        return uni.resolve(iid)
    if point in ("ViclCreate", "ViclExpire"):
        kind = "write" if instr.opcode == "Write" else "fill"
        pair = (iid, kind)
        if pair not in uni.pairs:
            return None
        return uni.create(pair) if point == "ViclCreate" else uni.expire(pair)
    if point in ("FillCreate", "FillExpire"):
        pair = (iid, "fill")
        if pair not in uni.pairs:
            return None
        return uni.create(pair) if point == "FillCreate" else uni.expire(pair)
    if point == "InvSend":
        return uni.send(iid)
    if point == "FlushEvent":
        return uni.flush_event(iid) if instr.opcode == "Flush" else None
    raise ValueError(f"unknown template point {point}")


def _finalize(info, uni, choice, causes, edges, axiom_insts, octx):
    for axiom_combo in product(*axiom_insts):
        all_edges = list(edges)
        all_edges.extend(octx.line_edges)
        for disjunct in axiom_combo:
            all_edges.extend(disjunct)
        graph = _materialize(info, uni, choice, causes, all_edges, octx)
        if graph is not None:
            yield graph


def _int_acyclic(n, arcs) -> bool:
    indeg = [0] * n
    adj = [[] for _ in range(n)]
    for s, d, _ in arcs:
        indeg[d] += 1
        adj[s].append(d)
    queue = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while queue:
        x = queue.pop()
        seen += 1
        for m in adj[x]:
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    return seen == n


def _materialize(info, uni, choice, causes, edges, octx):
    n = len(uni.nodes)
    if not _int_acyclic(n, edges):
        return None

    vicl_of = octx.vicl_of
    values = _fill_values(info, uni, vicl_of, edges)
    tr = octx.translated
    rank = octx.rank
    edges_sorted = sorted({(rank[s], rank[d], label, s, d) for s, d, label in edges})
    edge_tuple = tuple((tr[s], tr[d], label) for _, _, label, s, d in edges_sorted)

    sourcing = []
    for i in info.instrs:
        if i.opcode != "Read":
            continue
        ch = choice[i.id]
        src = (ch[1], ch[2]) if ch[0] == "hit" else (i.id, "fill")
        sourcing.append((i.id, vicl_of[src]))
    cause_tuple = tuple(sorted(
        (vicl_of[v], _tr_cause(vicl_of, c)) for v, c in causes.items()))
    return UhbGraph(
        nodes=octx.node_tuple,
        edges=edge_tuple,
        sourcing=tuple(sorted(sourcing)),
        expire_causes=cause_tuple,
        vicl_values=tuple(sorted((vicl_of[p], val) for p, val in values.items())),
        program=info.prog,
        access_stage=info.acc,
    )


def _tr_cause(vicl_of, cause):
    if cause[0] == CAUSE_DISPLACED:
        return (CAUSE_DISPLACED, vicl_of[cause[1]])
    return cause


def _number_instances(info, order):
    vicl_of = {}
    counts = {}
    for lid in sorted(order):
        for pair in order[lid]:
            creator, kind = pair
            core = info.core[creator]
            paddr = info.paddr[creator]
            nth = counts.get((core, paddr), 0)
            counts[(core, paddr)] = nth + 1
            vicl_of[pair] = Vicl(core, paddr, nth, creator, kind)
    return vicl_of


def _fill_values(info, uni, vicl_of, edges):
    """Fills carry the value left by the last write lifetime before them."""
    adj = [[] for _ in range(len(uni.nodes))]
    for s, d, _ in edges:
        adj[s].append(d)
    memo = {}

    def reaches(a, b):
        key = a
        seen = memo.get(key)
        if seen is None:
            seen = set()
            stack = [a]
            while stack:
                x = stack.pop()
                for m in adj[x]:
                    if m not in seen:
                        seen.add(m)
                        stack.append(m)
            memo[key] = seen
        return b in seen

    pairs = sorted(uni.pairs)
    values = {}
    writes = [p for p in pairs if p[1] == "write"]
    for p in writes:
        values[p] = info.by_id[p[0]].written_value
    for p in pairs:
        if p[1] != "fill":
            continue
        paddr = info.paddr[p[0]]
        prior = [w for w in writes
                 if info.paddr[w[0]] == paddr
                 and reaches(uni.expire(w), uni.create(p))]
        if not prior:
            values[p] = info.prog.initial_value(paddr)
            continue
        last = [w for w in prior
                if all(u == w or reaches(uni.expire(u), uni.create(w)) for u in prior)]
        values[p] = values[last[0]] if len(last) == 1 else info.prog.initial_value(paddr)
    return values

"""Bounded synthesis: find every program whose executions embed a threat pattern.

The search is explicit: enumerate canonical candidates, build their
executions, and keep programs with at least one embedding.  Two sound
accelerations sit in front of the expensive execution enumeration: a prefix
filter prunes generation subtrees that can no longer supply the pattern's
role requirements, and a whole-program precheck discards candidates whose
instructions cannot be assigned to roles at all.  Soundness of both is
audited by comparing against the unpruned pipeline at small bounds.

Results are sorted by (instruction count, canonical program text) and carry
their witness execution, the embedding, and a variant classification.
"""

from dataclasses import dataclass, replace

from uhbsynth.candidates import SynthesisBounds, Sketch, enumerate_candidates, estimate_candidates
from uhbsynth.executions import enumerate_executions, iter_executions
from uhbsynth.litmus import LitmusProgram, canonicalize, render_program, well_formed
from uhbsynth.machine import MicroarchSpec
from uhbsynth.patterns import Embedding, ThreatPattern, match
from uhbsynth.specdsl import parse_spec

VARIANT_TAGS = (
    "meltdown_shape",
    "spectre_shape",
    "meltdown_prime_shape",
    "spectre_prime_shape",
    "evict_reload",
    "write_allocate_write_reload",
    "clflush_evictor",
    "other",
)


class BoundsCeilingError(Exception):
    """The candidate space upper bound exceeds the configured ceiling."""

    def __init__(self, estimate, ceiling):
        self.estimate = estimate
        self.ceiling = ceiling
        super().__init__(f"candidate estimate {estimate} exceeds ceiling {ceiling}")


@dataclass(frozen=True)
class SynthResult:
    program: LitmusProgram   # canonical, annotated with roles and secret address
    witness: object          # UhbGraph
    embedding: Embedding
    variant: str

    def sort_key(self):
        n = sum(len(t.instructions) for t in self.program.threads)
        return (n, render_program(self.program))


def synthesize(spec: MicroarchSpec, pattern: ThreatPattern, bounds: SynthesisBounds,
               actors=("attacker", "victim"), candidate_ceiling=10_000_000,
               workers=1, prune=True, candidate_filter=None):
    """All programs within bounds with an execution embedding the pattern.

    Sound and complete over the candidate space; deterministic for any worker
    count.  `candidate_filter` (program -> bool) restricts the searched
    candidates; `prune=False` disables both accelerations (oracle mode).
    """
    est = estimate_candidates(spec, bounds)
    if est > candidate_ceiling:
        raise BoundsCeilingError(est, candidate_ceiling)
    prefix = _PrefixFilter(pattern) if prune else None
    sketch = _sketch_precheck(pattern, spec) if prune else None
    cands = enumerate_candidates(spec, bounds, actors=actors, prefix_filter=prefix,
                                 sketch_filter=sketch)
    if candidate_filter is not None:
        cands = (p for p in cands if candidate_filter(p))
    if workers > 1:
        results = _search_parallel(spec, pattern, cands, workers, prune)
    else:
        results = []
        for prog in cands:
            r = _first_match(spec, pattern, prog, prune)
            if r is not None:
                results.append(r)
    results.sort(key=SynthResult.sort_key)
    return results


def _search_parallel(spec, pattern, cands, workers, prune):
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    with ctx.Pool(workers, initializer=_init_worker, initargs=(spec, pattern, prune)) as pool:
        out = []
        for r in pool.imap_unordered(_worker_first_match, cands, chunksize=64):
            if r is not None:
                out.append(r)
    return out


_WORKER_STATE = {}


def _init_worker(spec, pattern, prune):
    _WORKER_STATE["spec"] = spec
    _WORKER_STATE["pattern"] = pattern
    _WORKER_STATE["prune"] = prune


def _worker_first_match(prog):
    return _first_match(_WORKER_STATE["spec"], _WORKER_STATE["pattern"], prog,
                        _WORKER_STATE["prune"])


def _first_match(spec, pattern, prog, prune=True):
    """First matching execution in canonical order, as a SynthResult."""
    if prune and not _precheck(pattern, prog, spec):
        return None
    for g in iter_executions(spec, prog):
        embs = match(pattern, g)
        if embs:
            emb = embs[0]
            annotated = _annotate(prog, pattern, emb)
            return SynthResult(annotated, g, emb, classify_variant(pattern, prog, emb))
    return None


def _annotate(prog, pattern, emb):
    roles = []
    secret = None
    for role, val in emb.bindings:
        if isinstance(val, int):
            roles.append((role, val))
            instr = prog.instruction(val)
            if role in ("filler", "evictor") and instr.dep_on is not None:
                src = prog.instruction(instr.dep_on)
                secret = prog.address_map.paddr(src.vaddr)
    return replace(prog, roles=tuple(sorted(roles)), secret_paddr=secret)


def strip_annotations(prog: LitmusProgram) -> LitmusProgram:
    return replace(prog, roles=(), secret_paddr=None)


def classify_variant(pattern: ThreatPattern, prog: LitmusProgram, emb: Embedding) -> str:
    """Pure function of (program, embedding): which named attack family this is."""
    role_names = {n.role for n in pattern.nodes}
    if {"filler", "reload"} <= role_names:
        filler = prog.instruction(emb.get("filler"))
        if not filler.squashed:
            return "other"
        if filler.opcode == "Write":
            return "write_allocate_write_reload"
        if emb.mechanism == "collision":
            return "evict_reload"
        root = _root_opcode(prog, filler)
        if root == "Branch":
            return "spectre_shape"
        if root in ("Read", "Write"):
            return "meltdown_shape"
        return "other"
    if {"evictor", "prime", "probe"} <= role_names:
        evictor = prog.instruction(emb.get("evictor"))
        if not evictor.squashed:
            return "other"
        if evictor.opcode == "Flush" and emb.mechanism == "flush":
            return "clflush_evictor"
        if evictor.opcode == "Write" and emb.mechanism == "invalidation":
            root = _root_opcode(prog, evictor)
            if root == "Branch":
                return "spectre_prime_shape"
            if root in ("Read", "Write"):
                return "meltdown_prime_shape"
        return "other"
    return "other"


def _root_opcode(prog, instr):
    seen = set()
    cur = instr
    while cur.speculative_under is not None and cur.speculative_under != cur.id:
        if cur.id in seen:
            return None
        seen.add(cur.id)
        cur = prog.instruction(cur.speculative_under)
        if cur.opcode == "Branch":
            return "Branch"
    return cur.opcode if cur.speculative_under is not None else None


def verify_result(result: SynthResult, spec: MicroarchSpec, pattern: ThreatPattern) -> bool:
    """Recompute executions and matching from scratch; the witness and the
    embedding must be reproduced exactly."""
    bare = strip_annotations(result.program)
    ok, _ = well_formed(bare, spec)
    if not ok:
        return False
    want = result.witness.dedup_key()
    for g in iter_executions(spec, bare):
        if g.dedup_key() != want:
            continue
        embs = match(pattern, g)
        if result.embedding not in embs:
            return False
        return result.variant == classify_variant(pattern, bare, result.embedding)
    return False


def filter_minimal(results):
    """Drop results whose program contains another result of the same variant
    as an instruction-deleted sub-program."""
    by_variant = {}
    for r in results:
        by_variant.setdefault(r.variant, set()).add(
            render_program(canonicalize(strip_annotations(r.program))))
    out = []
    for r in results:
        prog = strip_annotations(r.program)
        group = by_variant[r.variant]
        if not any(render_program(s) in group for s in _sub_programs(prog)):
            out.append(r)
    return out


def _sub_programs(prog):
    """All canonical well-formed proper sub-programs (instruction deletions)."""
    from itertools import combinations

    instrs = [i.id for i in prog.instructions()]
    for k in range(1, len(instrs)):
        for keep in combinations(instrs, k):
            sub = _delete(prog, set(keep))
            if sub is not None:
                yield canonicalize(sub)


def _delete(prog, keep_ids):
    threads = []
    for t in prog.threads:
        kept = tuple(i for i in t.instructions if i.id in keep_ids)
        for i in kept:
            if i.dep_on is not None and i.dep_on not in keep_ids:
                return None
            if i.speculative_under is not None and i.speculative_under not in keep_ids:
                return None
        if kept:
            threads.append(replace(t, instructions=kept))
    if not threads:
        return None
    # a guarding branch must still guard something
    by_id = {i.id: i for t in threads for i in t.instructions}
    for i in by_id.values():
        if i.opcode == "Branch" and not any(
                j.speculative_under == i.id for j in by_id.values()):
            return None
    return replace(prog, threads=tuple(threads), roles=(), secret_paddr=None)


# ---------------------------------------------------------------------------
# Fence mitigation


FENCE_AXIOM_TEXT = """
axiom fence_resolve_wait: forall i, j | is_guard(i), is_fence(j), po(i, j)
    => edge i.Resolve -> j.{acc} : fence_resolve_wait
axiom fence_access_block: forall i, j | is_fence(i), is_memory(j), po(i, j)
    => edge i.{acc} -> j.FillCreate : fence_access_block
     & edge i.{acc} -> j.InvSend : fence_access_block
axiom fence_flush_block: forall i, j | is_fence(i), is_flush(j), po(i, j)
    => edge i.{acc} -> j.FlushEvent : fence_access_block
"""


def fence_axioms(spec: MicroarchSpec):
    """The resolve-before-access fence axioms for a machine: memory-system
    events of post-fence instructions wait for pre-fence speculation to
    resolve."""
    text = _axiom_host(spec) + FENCE_AXIOM_TEXT.format(acc=spec.access_stage)
    parsed = parse_spec(text)
    return parsed.axioms


def _axiom_host(spec):
    lines = [f"machine fence_host", f"cores {spec.cores}",
             "stages " + " ".join(spec.stages), f"access_stage {spec.access_stage}"]
    return "\n".join(lines) + "\n"


def mitigation_check(spec: MicroarchSpec, pattern: ThreatPattern, bounds: SynthesisBounds,
                     axioms, actors=("attacker", "victim"), workers=1,
                     candidate_ceiling=10_000_000):
    """Synthesize over spec + fence axioms, restricted to candidates with a
    fence between the speculation source and a squashed memory-system op.
    Returns the surviving results (expected empty for the built-ins)."""
    spec2 = replace(spec, axioms=tuple(spec.axioms) + tuple(axioms))
    return synthesize(spec2, pattern, bounds, actors=actors, workers=workers,
                      candidate_ceiling=candidate_ceiling,
                      candidate_filter=has_fenced_window)


def has_fenced_window(prog: LitmusProgram) -> bool:
    """A fence sits between a speculation source and a squashed access/flush."""
    for t in prog.threads:
        seq = t.instructions
        for gi, g in enumerate(seq):
            if not (g.opcode == "Branch" and any(x.speculative_under == g.id for x in seq)) \
                    and not (g.squashed and g.speculative_under == g.id):
                continue
            for fi in range(gi + 1, len(seq)):
                if seq[fi].opcode != "Fence":
                    continue
                for mi in range(fi + 1, len(seq)):
                    m = seq[mi]
                    if m.squashed and m.opcode in ("Read", "Write", "Flush"):
                        return True
    return False


# ---------------------------------------------------------------------------
# Search pruning


def _role_caps(pattern):
    """Per required instruction-role: admissible (actor, commit, opcodes, dep)."""
    caps = []
    for n in pattern.nodes:
        if n.kind == "vicl" or n.optional:
            continue
        if n.alternatives:
            caps.append((n.role, tuple(
                (a.actor, a.commit, a.opcodes or ("Read", "Write", "Flush"), a.needs_dep)
                for a in n.alternatives)))
        else:
            ops = n.opcodes or ("Read", "Write", "Flush")
            caps.append((n.role, ((n.actor, n.commit, ops, False),)))
    return caps


def _sketch_fits(sk: Sketch, alts) -> bool:
    for actor, commit, ops, needs_dep in alts:
        if actor != "any" and sk.actor != actor:
            continue
        if commit == "committed" and sk.squashed:
            continue
        if commit == "squashed" and not sk.squashed:
            continue
        if sk.opcode not in ops:
            continue
        if needs_dep and sk.dep is None:
            continue
        return True
    return False


class _PrefixFilter:
    """Incremental generation-subtree pruning.

    State is (matching DP over role bit-sets, per-consecutive-pair hit count,
    any-squashed flag), extended one sketch at a time.  A subtree is pruned
    when the unmatched roles (plus the extra instruction a speculation window
    costs when nothing squashed has been placed yet) cannot fit in the
    remaining slot budget.
    """

    def __init__(self, pattern):
        self.caps = _role_caps(pattern)
        self.nroles = len(self.caps)
        role_index = {r: k for k, (r, _) in enumerate(self.caps)}
        self.consec_masks = tuple(
            (1 << role_index[c[1]]) | (1 << role_index[c[2]])
            for c in pattern.constraints
            if c[0] == "consecutive" and c[1] in role_index and c[2] in role_index)
        self.spec_only = 0
        for k, (_, alts) in enumerate(self.caps):
            if all(commit == "squashed" for _, commit, _, _ in alts):
                self.spec_only |= 1 << k
        # a self-guarded illegal access could both open the window and fill a
        # role unless every squashed-only role needs a dependency (self-guards
        # never carry one) or is a flush (flushes cannot fault)
        self.window_bonus = 0
        if self.spec_only:
            fillable_by_self_guard = any(
                all(commit == "squashed" for _, commit, _, _ in alts)
                and any(not needs_dep and ("Read" in ops or "Write" in ops)
                        for _, _, ops, needs_dep in alts)
                for _, alts in self.caps)
            self.window_bonus = 0 if fillable_by_self_guard else 1
        self._fitmasks = {}
        # state: (per-roleset best match count (-1 unreachable), consec counts, squashed?)
        nsets = 1 << self.nroles
        self.start = (tuple([0] + [-1] * (nsets - 1)), (0,) * len(self.consec_masks), False)

    def _fitmask(self, sk):
        key = (sk.actor, sk.opcode, sk.under is not None, sk.dep is not None)
        m = self._fitmasks.get(key)
        if m is None:
            m = 0
            for k, (_, alts) in enumerate(self.caps):
                if _sketch_fits(sk, alts):
                    m |= 1 << k
            self._fitmasks[key] = m
        return m

    def extend(self, state, sk, remaining):
        best, consec, squashed = state
        m = self._fitmask(sk)
        if m:
            cur = list(best)
            for roleset in range(len(best)):
                cnt = best[roleset]
                if cnt < 0:
                    continue
                free = m & ~roleset
                while free:
                    bit = free & -free
                    free ^= bit
                    ns = roleset | bit
                    if cur[ns] < cnt + 1:
                        cur[ns] = cnt + 1
            best = tuple(cur)
            if self.consec_masks:
                consec = tuple(c + (1 if m & mask else 0)
                               for c, mask in zip(consec, self.consec_masks))
        squashed = squashed or sk.under is not None
        need = self.nroles - max(best)
        if not squashed and self.spec_only:
            need += self.window_bonus  # opening a speculation window costs a guard
        if need > remaining:
            return None
        for c in consec:
            if c + remaining < 2:
                return None
        return (best, consec, squashed)


class _View:
    """Uniform instruction view for prechecks, from programs or sketches.

    Addresses stay symbolic (a virtual-address index); per-map paddr and set
    arrays are consulted at check time, so one view set serves every address
    map of a sketched thread set.
    """

    __slots__ = ("actor", "core", "opcode", "v", "squashed", "dep_src", "pos", "tx")

    def __init__(self, actor, core, opcode, v, squashed, dep_src, pos, tx):
        self.actor = actor
        self.core = core
        self.opcode = opcode
        self.v = v                # vaddr index or None
        self.squashed = squashed
        self.dep_src = dep_src    # the source read's view, or None
        self.pos = pos
        self.tx = tx


class _AddrMap:
    """vaddr index -> (paddr id, set); the blind instance treats every
    address comparison as satisfiable (used before maps are chosen)."""

    __slots__ = ("pv", "sv", "blind")

    def __init__(self, pv=None, sv=None, blind=False):
        self.pv = pv
        self.sv = sv
        self.blind = blind

    def same_paddr(self, a, b):
        return self.blind or self.pv[a] == self.pv[b]

    def diff_paddr(self, a, b):
        return self.blind or self.pv[a] != self.pv[b]

    def same_set(self, a, b):
        return self.blind or self.sv[a] == self.sv[b]


_BLIND = _AddrMap(blind=True)


def _views_from_prog(prog: LitmusProgram):
    vidx = {name: k for k, name in enumerate(prog.address_map.vaddrs())}
    pids = {}
    pv, sv = [], []
    for name in prog.address_map.vaddrs():
        p = prog.address_map.paddr(name)
        pv.append(pids.setdefault(p, len(pids)))
        sv.append(prog.address_map.set_index(name))
    threads = []
    for tx, t in enumerate(prog.threads):
        tv = []
        for k, i in enumerate(t.instructions):
            tv.append(_View(t.actor, t.core, i.opcode,
                            vidx[i.vaddr] if i.vaddr is not None else None,
                            i.squashed, None, k, tx))
        pos_of = {i.id: k for k, i in enumerate(t.instructions)}
        for k, i in enumerate(t.instructions):
            if i.dep_on is not None and i.dep_on in pos_of:
                tv[k].dep_src = tv[pos_of[i.dep_on]]
        threads.append(tv)
    return threads, _AddrMap(pv, sv)


def _views_from_sketches(actor_combo, threads_sketch):
    threads = []
    for tx, (actor, seq) in enumerate(zip(actor_combo, threads_sketch)):
        tv = []
        for k, s in enumerate(seq):
            tv.append(_View(actor, tx, s.opcode, s.v,
                            s.under is not None, None, k, tx))
        for k, s in enumerate(seq):
            if s.dep is not None:
                tv[k].dep_src = tv[s.dep]
        threads.append(tv)
    return threads


def _amap_arrays(amap) -> _AddrMap:
    pids = {}
    entries = sorted(amap.entries, key=lambda e: int(e[0][1:]))
    pv = [pids.setdefault(p, len(pids)) for _, p, _ in entries]
    sv = [s for _, _, s in entries]
    return _AddrMap(pv, sv)


def _view_fits(view: _View, node) -> bool:
    alts = node.alternatives
    if not alts:
        if node.actor != "any" and view.actor != node.actor:
            return False
        if node.commit == "committed" and view.squashed:
            return False
        if node.commit == "squashed" and not view.squashed:
            return False
        return not node.opcodes or view.opcode in node.opcodes
    for a in alts:
        if view.actor != a.actor:
            continue
        if a.commit == "committed" and view.squashed:
            continue
        if a.commit == "squashed" and not view.squashed:
            continue
        if a.opcodes and view.opcode not in a.opcodes:
            continue
        if a.needs_dep:
            src = view.dep_src
            if src is None or src.opcode != "Read" or src.squashed != view.squashed:
                continue
        return True
    return False


def _precheck(pattern: ThreatPattern, prog: LitmusProgram, spec: MicroarchSpec) -> bool:
    threads, addr = _views_from_prog(prog)
    return _views_feasible(pattern, threads, addr, spec)


class _SketchPrecheck:
    """Candidate filter over sketched threads: an address-blind gate before
    the map loop, then the full necessary-conditions check per address map."""

    def __init__(self, pattern, spec):
        self.pattern = pattern
        self.spec = spec
        self._views = None
        self._amap_cache = {}

    def threads_ok(self, actor_combo, threads_sketch) -> bool:
        self._views = _views_from_sketches(actor_combo, threads_sketch)
        return _views_feasible(self.pattern, self._views, _BLIND, self.spec)

    def __call__(self, actor_combo, threads_sketch, amap) -> bool:
        key = amap.entries
        addr = self._amap_cache.get(key)
        if addr is None:
            addr = _amap_arrays(amap)
            self._amap_cache[key] = addr
        return _views_feasible(self.pattern, self._views, addr, self.spec)


def _sketch_precheck(pattern: ThreatPattern, spec: MicroarchSpec):
    return _SketchPrecheck(pattern, spec)


def _views_feasible(pattern, threads, addr, spec) -> bool:
    """Necessary conditions for any embedding, checked before execution
    enumeration.  Mirrors the sourcing and eviction rules of the engine:
    same-core refills must be program-order earlier, cross-core hits come
    only from committed victim reads, squashed writes only leave fills under
    write-allocate, and invalidations need the coherence protocol."""
    role_names = {n.role for n in pattern.nodes}
    if {"filler", "reload"} <= role_names:
        return _feasible_refill(pattern, threads, addr, spec)
    if {"prime", "probe", "evictor"} <= role_names:
        return _feasible_probe(pattern, threads, addr, spec)
    return True


def _feasible_refill(pattern, threads, addr, spec) -> bool:
    reload_node = pattern.node("reload")
    filler_node = pattern.node("filler")
    evict_node = pattern.node("evict") if "evict" in {n.role for n in pattern.nodes} else None
    all_views = [v for tv in threads for v in tv]
    for tv in threads:
        for reload in tv:
            if reload.opcode != "Read" or not _view_fits(reload, reload_node):
                continue
            fillers = []
            for f in all_views:
                if f is reload or f.v is None or not addr.same_paddr(f.v, reload.v):
                    continue
                if not _view_fits(f, filler_node):
                    continue
                if f.core == reload.core:
                    if f.pos >= reload.pos or not f.squashed:
                        continue  # same-core refill: earlier and speculative
                    if f.opcode == "Write" and not spec.write_allocate:
                        continue  # a squashed store leaves no fill to hit
                elif not (f.actor == "victim" and f.opcode == "Read" and not f.squashed):
                    continue      # cross-core hits need a committed victim read
                fillers.append(f)
            if not fillers:
                continue
            if evict_node is None:
                return True
            for ev in all_views:
                if ev is reload or ev.v is None or not _view_fits(ev, evict_node):
                    continue
                if ev.opcode == "Flush":
                    if addr.same_paddr(ev.v, reload.v) and any(f is not ev for f in fillers):
                        return True
                elif (addr.diff_paddr(ev.v, reload.v) and ev.core == reload.core
                      and addr.same_set(ev.v, reload.v)):
                    # collision eviction needs an initial lifetime to displace
                    if any(f is not ev for f in fillers) and any(
                            x is not reload and x is not ev and x.v is not None
                            and addr.same_paddr(x.v, reload.v) and x.core == reload.core
                            for x in all_views):
                        return True
    return False


def _feasible_probe(pattern, threads, addr, spec) -> bool:
    prime_node = pattern.node("prime")
    probe_node = pattern.node("probe")
    ev_node = pattern.node("evictor")
    all_views = [v for tv in threads for v in tv]
    inv_ok = spec.coherence.kind == "invalidation_based"
    spec_inv = spec.coherence.speculative_write_requests_visible
    for tv in threads:
        for i, prime in enumerate(tv):
            if prime.opcode != "Read" or not _view_fits(prime, prime_node):
                continue
            for j in range(i + 1, len(tv)):
                probe = tv[j]
                if probe.opcode != "Read" or probe.v is None \
                        or not addr.same_paddr(probe.v, prime.v) \
                        or not _view_fits(probe, probe_node):
                    continue
                if not addr.blind and any(
                        tv[k].v is not None and addr.same_paddr(tv[k].v, prime.v)
                        for k in range(i + 1, j)):
                    continue
                for ev in all_views:
                    if ev is prime or ev is probe or not _view_fits(ev, ev_node):
                        continue
                    if _ev_mechanism_ok(ev, prime, addr, spec, inv_ok, spec_inv):
                        return True
    return False


def _ev_mechanism_ok(ev, prime, addr, spec, inv_ok, spec_inv) -> bool:
    if ev.v is None:
        return False
    if ev.opcode == "Flush":
        return addr.same_paddr(ev.v, prime.v)
    if ev.opcode == "Write" and ev.core != prime.core and addr.same_paddr(ev.v, prime.v):
        if not inv_ok:
            return False
        return (not ev.squashed) or spec_inv
    if (ev.core == prime.core and addr.diff_paddr(ev.v, prime.v)
            and addr.same_set(ev.v, prime.v)):
        if ev.opcode == "Write" and ev.squashed and not spec.write_allocate:
            return False  # no fill, nothing displaces the primed line
        return True
    return False

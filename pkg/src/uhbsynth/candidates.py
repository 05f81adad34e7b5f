"""Bounded enumeration of candidate litmus programs.

Programs are generated thread by thread, slot by slot, with addresses named
by first use, then crossed with every canonical address map (which virtual
addresses alias, which physical addresses collide in one cache set) and the
permission table implied by the per-access legality marks.  Isomorphic
duplicates are removed by canonicalization.

The speculation structure is deliberately small: at most one speculation
window per thread, rooted at a mispredicted branch or at one
permission-illegal access (which guards itself); instructions after the root
are each either squashed under it or committed.  Victims run committed legal
code.  Values are fixed (memory starts at 0, stores write 1): the modeled
attacks depend on addresses and cache events, not data width.

`prefix_filter(placed, remaining)` lets a caller prune generation subtrees;
it must be conservative (never reject a prefix whose completions could
match).
"""

from dataclasses import dataclass
from itertools import product

from uhbsynth.litmus import (
    AddressMap,
    Instruction,
    LitmusProgram,
    PermissionTable,
    Thread,
    canonicalize,
    render_program,
)
from uhbsynth.machine import MicroarchSpec


@dataclass(frozen=True)
class SynthesisBounds:
    max_instructions: int
    max_threads: int
    max_vaddrs: int
    max_paddrs: int

    def validate(self):
        for f in ("max_instructions", "max_threads", "max_vaddrs", "max_paddrs"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")


@dataclass(frozen=True)
class Sketch:
    """One instruction during generation, before ids and addresses are final."""

    actor: str
    opcode: str
    v: int = None          # virtual address index (first-use order)
    dep: int = None        # thread-local position of the dependency source
    under: int = None      # thread-local position of the guard; == own pos if self
    illegal: bool = False  # permission-illegal access (self-guarded, squashed)

    @property
    def squashed(self) -> bool:
        return self.under is not None


def enumerate_candidates(spec: MicroarchSpec, bounds: SynthesisBounds,
                         actors=("attacker", "victim"), prefix_filter=None,
                         sketch_filter=None):
    """Yield every canonical well-formed program within bounds, exactly once.

    `prefix_filter` is an object with `start` and `extend(state, sketch,
    remaining)` (returning None to prune); `sketch_filter(actor_combo,
    threads, amap)` rejects fully sketched candidates before they are built.
    Both must be conservative.
    """
    import hashlib

    bounds.validate()
    seen = set()
    for prog in _raw_candidates(spec, bounds, actors, prefix_filter, sketch_filter):
        if len(prog.threads) == 1:
            # single-thread programs come out canonical by construction
            yield prog
            continue
        canon = canonicalize(prog)
        key = hashlib.blake2b(render_program(canon).encode(), digest_size=12).digest()
        if key in seen:
            continue
        seen.add(key)
        yield canon


def estimate_candidates(spec: MicroarchSpec, bounds: SynthesisBounds) -> int:
    """Upper bound on the raw candidate count, for the search ceiling.

    Dynamic program over the same per-slot option structure the generator
    uses; slightly loose (it ignores the guarding-branch-needs-a-dependent
    rule and counts thread-order isomorphs).
    """
    V = bounds.max_vaddrs
    n = bounds.max_instructions

    def seq_counts(actor, v_start):
        # per length: (v_used, guard, dep_sources) -> count
        levels = [{(v_start, 0, 0): 1}]
        for ln in range(n):
            nxt = {}
            for (v, g, r), cnt in levels[ln].items():
                moves = {}

                def add(key, ways):
                    if ways:
                        moves[key] = moves.get(key, 0) + ways

                stay, bump = v, min(v + 1, V)
                vstay, vbump = v, (1 if v < V else 0)
                for radd in (1, 0):  # read, write
                    if actor == "attacker":
                        add((stay, g, r), vstay)                       # committed
                        add((bump, g, r), vbump)
                        if g:
                            ways = 1 + r                                # squashed, optional dep
                            add((stay, g, r + radd), vstay * ways)
                            add((bump, g, r + radd), vbump * ways)
                        elif spec.speculation.allows_speculative_loads_past_permission_check:
                            add((stay, 1, r + radd), vstay)             # illegal self-guard
                            add((bump, 1, r + radd), vbump)
                    else:
                        ways = 1 + r
                        add((stay, g, r + radd), vstay * ways)
                        add((bump, g, r + radd), vbump * ways)
                if actor == "attacker":
                    if spec.has_flush_instruction:
                        fl = 1 + (1 if g and spec.speculation.allows_speculative_flush else 0)
                        add((stay, g, r), vstay * fl)
                        add((bump, g, r), vbump * fl)
                    add((stay, g, r), 1 + (1 if g else 0))              # fence
                    if not g and spec.speculation.allows_branch_misprediction:
                        add((stay, 1, r), 1)                            # branch
                for (v2, g2, r2), ways in moves.items():
                    key = (v2, g2, min(r2, n))
                    nxt[key] = nxt.get(key, 0) + cnt * ways
            levels.append(nxt)
        out = {}
        for ln in range(1, n + 1):
            for (v, _, _), cnt in levels[ln].items():
                out[(ln, v)] = out.get((ln, v), 0) + cnt
        return out

    per_actor = {(a, v0): seq_counts(a, v0)
                 for a in ("attacker", "victim") for v0 in range(V + 1)}
    map_counts = {v: sum(1 for _ in _address_maps(v, bounds.max_paddrs, spec.num_sets)) or 1
                  for v in range(V + 1)}

    total = 0
    max_threads = min(bounds.max_threads, spec.cores)
    for k in range(1, max_threads + 1):
        for combo in product(("attacker", "victim"), repeat=k):
            # compose thread sequence counts over shared budget and vaddrs
            acc = {(0, 0): 1}
            for actor in combo:
                nxt = {}
                for (used_slots, v), cnt in acc.items():
                    for (ln, v_end), c2 in per_actor[(actor, v)].items():
                        if used_slots + ln > n:
                            continue
                        key = (used_slots + ln, v_end)
                        nxt[key] = nxt.get(key, 0) + cnt * c2
                acc = nxt
            for (_, v), cnt in acc.items():
                total += cnt * map_counts[min(v, V)]
    return total


def _raw_candidates(spec, bounds, actors, prefix_filter, sketch_filter=None):
    max_threads = min(bounds.max_threads, spec.cores)
    for k in range(1, max_threads + 1):
        for actor_combo in product(actors, repeat=k):
            for threads_sketch in _thread_sets(spec, bounds, actor_combo, prefix_filter):
                yield from _assemble(spec, bounds, actor_combo, threads_sketch,
                                     sketch_filter)


def _thread_sets(spec, bounds, actor_combo, prefix_filter):
    """All tuples of per-thread sketch sequences within the instruction budget."""
    start = prefix_filter.start if prefix_filter is not None else None

    def rec(tx, budget, vaddrs_used, acc, fstate):
        if tx == len(actor_combo):
            yield tuple(acc)
            return
        remaining_threads = len(actor_combo) - tx - 1
        max_len = budget - remaining_threads
        placed = sum(len(seq) for seq in acc)
        for seq, used, fs in _sequences(spec, bounds, actor_combo[tx], max_len,
                                        vaddrs_used, placed, prefix_filter, fstate):
            acc.append(seq)
            yield from rec(tx + 1, budget - len(seq), used, acc, fs)
            acc.pop()

    yield from rec(0, bounds.max_instructions, 0, [], start)


def _sequences(spec, bounds, actor, max_len, vaddrs_used, placed_before,
               prefix_filter, fstate):
    """DFS over instruction sequences for one thread.

    Yields (sequence, vaddrs_used_after, filter_state).  The filter state is
    threaded through the search; `extend` returning None prunes the subtree.
    """

    out = []

    def rec(seq, used, fs):
        if seq:
            guard = _guard_pos(seq)
            branch_ok = not (guard is not None and seq[guard].opcode == "Branch"
                             and not any(s.under == guard for s in seq))
            if branch_ok:
                out.append((tuple(seq), used, fs))
        if len(seq) == max_len:
            return
        for sk, used2 in _slot_options(spec, bounds, actor, seq, used):
            fs2 = fs
            if prefix_filter is not None:
                remaining = (bounds.max_instructions - placed_before
                             - len(seq) - 1)
                fs2 = prefix_filter.extend(fs, sk, remaining)
                if fs2 is None:
                    continue
            seq.append(sk)
            rec(seq, used2, fs2)
            seq.pop()

    rec([], vaddrs_used, fstate)
    return out


def _guard_pos(seq):
    for k, s in enumerate(seq):
        if s.under == k or s.opcode == "Branch":
            return k
    return None


def _slot_options(spec, bounds, actor, seq, vaddrs_used):
    pos = len(seq)
    guard = _guard_pos(seq)
    sp = spec.speculation
    vaddr_choices = list(range(vaddrs_used)) + ([vaddrs_used] if vaddrs_used < bounds.max_vaddrs else [])

    opts = []
    for opcode in ("Read", "Write"):
        for v in vaddr_choices:
            used2 = max(vaddrs_used, v + 1)
            if actor == "attacker":
                opts.append((Sketch(actor, opcode, v), used2))  # committed, independent
                if guard is not None:
                    # speculative body of the window: squashed, optionally
                    # address-dependent on an earlier squashed read
                    opts.append((Sketch(actor, opcode, v, None, guard), used2))
                    for k, s in enumerate(seq):
                        if s.opcode == "Read" and s.squashed:
                            opts.append((Sketch(actor, opcode, v, k, guard), used2))
                elif sp.allows_speculative_loads_past_permission_check:
                    # permission-illegal access: squashed, guarding itself
                    opts.append((Sketch(actor, opcode, v, None, pos, illegal=True), used2))
            else:
                opts.append((Sketch(actor, opcode, v), used2))
                for k, s in enumerate(seq):
                    if s.opcode == "Read":
                        opts.append((Sketch(actor, opcode, v, k, None), used2))
    if actor == "attacker" and spec.has_flush_instruction:
        for v in vaddr_choices:
            used2 = max(vaddrs_used, v + 1)
            opts.append((Sketch(actor, "Flush", v), used2))
            if guard is not None and sp.allows_speculative_flush:
                opts.append((Sketch(actor, "Flush", v, None, guard), used2))
    if actor == "attacker":
        opts.append((Sketch(actor, "Fence"), vaddrs_used))
        if guard is not None:
            opts.append((Sketch(actor, "Fence", None, None, guard), vaddrs_used))
        if guard is None and sp.allows_branch_misprediction:
            opts.append((Sketch(actor, "Branch"), vaddrs_used))
    return opts


_MAP_CACHE = {}


def _cached_maps(nvaddrs, max_paddrs, num_sets):
    key = (nvaddrs, max_paddrs, num_sets)
    maps = _MAP_CACHE.get(key)
    if maps is None:
        if nvaddrs == 0:
            maps = [AddressMap.of({})]
        else:
            maps = list(_address_maps(nvaddrs, max_paddrs, num_sets))
        _MAP_CACHE[key] = maps
    return maps


def _assemble(spec, bounds, actor_combo, threads_sketch, sketch_filter=None):
    """Cross the sketched threads with address maps and permission tables."""
    vaddr_count = 0
    for seq in threads_sketch:
        for s in seq:
            if s.v is not None:
                vaddr_count = max(vaddr_count, s.v + 1)
    if sketch_filter is not None:
        gate = getattr(sketch_filter, "threads_ok", None)
        if gate is not None and not gate(actor_combo, threads_sketch):
            return
    for amap in _cached_maps(vaddr_count, bounds.max_paddrs, spec.num_sets):
        if sketch_filter is not None and not sketch_filter(actor_combo, threads_sketch, amap):
            continue
        prog = _build_program(actor_combo, threads_sketch, amap)
        if prog is not None:
            yield prog


def _address_maps(nvaddrs, max_paddrs, num_sets):
    """Canonical maps: paddrs and sets named in first-use order."""

    def rec(v, passign, sassign):
        if v == nvaddrs:
            mapping = {}
            for idx in range(nvaddrs):
                p = passign[idx]
                mapping[f"v{idx}"] = (f"p{p}", sassign[p])
            yield AddressMap.of(mapping)
            return
        npad = max(passign) + 1 if passign else 0
        for p in range(min(npad + 1, max_paddrs)):
            if p < npad:
                yield from rec(v + 1, passign + [p], sassign)
            else:
                nset = max(sassign) + 1 if sassign else 0
                for s in range(min(nset + 1, num_sets)):
                    yield from rec(v + 1, passign + [p], sassign + [s])

    yield from rec(0, [], [])


def _build_program(actor_combo, threads_sketch, amap):
    threads = []
    gid = 0
    illegal_marks = {}
    legal_marks = set()
    for tx, (actor, seq) in enumerate(zip(actor_combo, threads_sketch)):
        base = gid
        instrs = []
        for k, s in enumerate(seq):
            vaddr = f"v{s.v}" if s.v is not None else None
            dep_on = base + s.dep if s.dep is not None else None
            under = base + s.under if s.under is not None else None
            instr = Instruction(
                id=gid,
                opcode=s.opcode,
                vaddr=vaddr,
                written_value=1 if s.opcode == "Write" else None,
                dep_on=dep_on,
                speculative_under=under,
                squashed=s.under is not None,
            )
            if s.opcode in ("Read", "Write") and vaddr is not None:
                paddr = amap.paddr(vaddr)
                mark = (actor, paddr, s.opcode)
                if s.illegal:
                    illegal_marks[mark] = True
                else:
                    legal_marks.add(mark)
            instrs.append(instr)
            gid += 1
        threads.append(Thread(actor, tx, tuple(instrs)))
    for mark in illegal_marks:
        if mark in legal_marks:
            return None  # one access legal and another illegal on the same triple
    perms = {}
    for actor, paddr, opcode in illegal_marks:
        key = (actor, paddr)
        r, w = perms.get(key, (True, True))
        if opcode == "Read":
            r = False
        else:
            w = False
        perms[key] = (r, w)
    return LitmusProgram(
        threads=tuple(threads),
        address_map=amap,
        permissions=PermissionTable.of(perms),
        initial_values=(),
    )

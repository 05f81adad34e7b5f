"""Deterministic cycle-approximate multicore simulator with speculation.

The independent oracle: it executes a litmus test with in-order commit,
speculative execution past unresolved branches and permission checks,
squash-with-cache-side-effects, and an MSI-style invalidation protocol, and
reports whether the attacker's timed access classifies as a hit or a miss.
`leak_check` runs the program in both secret worlds and succeeds when the
classification differs.

Timing is fixed per event with no contention: the attacks depend only on the
hit/miss separability around the threshold, hence "cycle-approximate".  The
designated observation access (the probe/reload role) waits for every other
instruction to finish first, which models the prime -> trigger -> probe
handshake of a real attack driver.
"""

from dataclasses import dataclass, field, replace

from uhbsynth.litmus import LitmusProgram, well_formed
from uhbsynth.machine import MicroarchSpec

MAX_CYCLES = 100_000


class SimDeadlock(Exception):
    """Simulated cores stopped making progress (cyclic wait)."""


@dataclass(frozen=True)
class SimConfig:
    hit_latency: int = 10
    miss_latency: int = 100
    threshold: int = 60           # classify >= threshold as miss
    write_allocate: bool = True
    invalidation_on_speculative_write: bool = True
    resolve_latency: int = 250    # speculation window length; > two dependent misses
    speculation_enabled: bool = True

    def validate(self):
        if not (self.hit_latency < self.threshold <= self.miss_latency):
            raise ValueError("need hit_latency < threshold <= miss_latency")


@dataclass
class InstrRecord:
    issue: int = None
    complete: int = None
    hit: bool = None
    squashed: bool = False
    effective_paddr: str = None


@dataclass
class SimTrace:
    records: dict                 # instruction id -> InstrRecord
    line_events: list             # (cycle, core, set, paddr, state)
    observation_id: int
    observation_kind: str         # "reload" | "probe"
    classification: str           # "hit" | "miss" | "none"
    inferred_secret_bit: int
    final_memory: dict
    read_values: dict             # committed read id -> value
    swmr_ok: bool

    def latency(self, iid: int):
        r = self.records[iid]
        if r.issue is None or r.complete is None:
            return None
        return r.complete - r.issue


class _Line:
    __slots__ = ("paddr", "state", "value")

    def __init__(self, paddr, state, value):
        self.paddr = paddr
        self.state = state  # "M" | "S"
        self.value = value


def observation_instruction(prog: LitmusProgram):
    """The timed access: the probe/reload role, else the last committed attacker read."""
    for kind in ("probe", "reload"):
        iid = prog.role(kind)
        if iid is not None:
            return iid, kind
    last = None
    for t in prog.threads:
        if t.actor != "attacker":
            continue
        for i in t.instructions:
            if i.opcode == "Read" and i.committed:
                last = i.id
    return last, "reload"


def simulate(prog: LitmusProgram, cfg: SimConfig, secret: int,
             spec: MicroarchSpec = None) -> SimTrace:
    """Run the program once with `secret` stored at the designated secret address."""
    cfg.validate()
    if spec is not None:
        ok, diags = well_formed(prog, spec)
        if not ok:
            raise ValueError("program is not well-formed: " + "; ".join(map(str, diags)))
    return _Sim(prog, cfg, secret).run()


class _Sim:
    def __init__(self, prog, cfg, secret):
        self.prog = prog
        self.cfg = cfg
        self.memory = {p: v for p, v in prog.initial_values}
        for _, p, _ in prog.address_map.entries:
            self.memory.setdefault(p, 0)
        if prog.secret_paddr is not None:
            self.memory[prog.secret_paddr] = secret
        self.caches = {t.core: {} for t in prog.threads}   # set index -> _Line
        self.records = {i.id: InstrRecord() for i in prog.instructions()}
        self.line_events = []
        self.obs_id, self.obs_kind = observation_instruction(prog)
        self.roots = {}
        self.read_values = {}
        self.swmr_ok = True
        for t in prog.threads:
            for i in t.instructions:
                if i.speculative_under is not None:
                    self.roots[i.id] = self._root(i)
        self.resolve_at = {}
        self.killed = set()      # squashed instructions barred from issuing
        self.pending = []        # (complete_cycle, instr, effective paddr, hit)
        self.core_of = {i.id: t.core for t in prog.threads for i in t.instructions}
        self.actor_of = {i.id: t.actor for t in prog.threads for i in t.instructions}

    def _root(self, instr):
        cur = instr
        seen = set()
        while cur.speculative_under is not None and cur.speculative_under != cur.id:
            if cur.id in seen:
                break
            seen.add(cur.id)
            cur = self.prog.instruction(cur.speculative_under)
            if cur.opcode == "Branch":
                break
        return cur.id

    def run(self) -> SimTrace:
        prog, cfg = self.prog, self.cfg
        pcs = {t.core: 0 for t in prog.threads}
        threads = {t.core: t for t in prog.threads}
        cycle = 0
        while True:
            if cycle > MAX_CYCLES:
                raise SimDeadlock(f"no progress by cycle {cycle}")
            # 1. deliver completions
            for entry in sorted(self.pending, key=lambda e: (e[0], e[1].id)):
                if entry[0] == cycle:
                    self._complete(cycle, *entry[1:])
            self.pending = [e for e in self.pending if e[0] > cycle]
            # 2. resolve guards, squashing their windows
            for iid, when in sorted(self.resolve_at.items()):
                if when == cycle:
                    self._squash_window(iid)
            self.resolve_at = {i: w for i, w in self.resolve_at.items() if w > cycle}
            # 3. issue at most one instruction per core
            for core in sorted(pcs):
                t = threads[core]
                while pcs[core] < len(t.instructions):
                    instr = t.instructions[pcs[core]]
                    if instr.id in self.killed or (
                            instr.squashed and not cfg.speculation_enabled):
                        self.records[instr.id].squashed = True
                        pcs[core] += 1
                        continue
                    if self._can_issue(t, pcs[core], instr, cycle):
                        self._issue(cycle, instr)
                        pcs[core] += 1
                    break
            self._check_swmr()
            if self._done(threads, pcs):
                break
            cycle += 1
        final_memory = dict(self.memory)
        for core, lines in sorted(self.caches.items()):
            for s, line in sorted(lines.items(), key=lambda kv: str(kv[0])):
                if line.state == "M":
                    final_memory[line.paddr] = line.value
        classification = "none"
        bit = 0
        if self.obs_id is not None:
            lat = self.records[self.obs_id].complete - self.records[self.obs_id].issue
            classification = "miss" if lat >= cfg.threshold else "hit"
            if self.obs_kind == "probe":
                bit = 1 if classification == "miss" else 0
            else:
                bit = 1 if classification == "hit" else 0
        return SimTrace(
            records=self.records,
            line_events=self.line_events,
            observation_id=self.obs_id,
            observation_kind=self.obs_kind,
            classification=classification,
            inferred_secret_bit=bit,
            final_memory=final_memory,
            read_values=self.read_values,
            swmr_ok=self.swmr_ok,
        )

    def _done(self, threads, pcs):
        if self.pending or self.resolve_at:
            return False
        for core, t in threads.items():
            if pcs[core] < len(t.instructions):
                return False
        return True

    def _can_issue(self, thread, pos, instr, cycle):
        recs = self.records
        # in-order issue within the thread, one per cycle handled by caller
        if instr.dep_on is not None:
            dep = recs[instr.dep_on]
            if dep.complete is None or dep.complete > cycle:
                return False
        # a fence holds back everything after it until prior work resolves
        for k in range(pos):
            prior = thread.instructions[k]
            if prior.opcode != "Fence":
                continue
            if recs[prior.id].complete is None and prior.id not in self.killed:
                return False
        # the timed observation access waits for the rest of the system,
        # except instructions queued behind it in its own thread
        if instr.id == self.obs_id:
            own_later = {i.id for i in thread.instructions[pos + 1:]}
            for other in self.prog.instructions():
                if other.id == instr.id or other.id in own_later:
                    continue
                r = recs[other.id]
                if other.id in self.killed or r.squashed:
                    continue
                if r.complete is None and not (other.squashed and r.issue is None
                                               and self._window_closed(other)):
                    return False
            if self.resolve_at:
                return False
        return True

    def _window_closed(self, instr):
        root = self.roots.get(instr.id)
        return root is not None and root not in self.resolve_at \
            and self.records[root].issue is not None

    def _issue(self, cycle, instr):
        cfg = self.cfg
        rec = self.records[instr.id]
        rec.issue = cycle
        if instr.opcode == "Branch":
            rec.complete = cycle + 1
            if self._guards_anything(instr):
                self.resolve_at[instr.id] = cycle + cfg.resolve_latency
            return
        if instr.opcode == "Fence":
            # completes once every prior guard in the thread has resolved
            self.pending.append((self._fence_ready(instr, cycle), instr, None, None))
            return
        eff = self._effective_paddr(instr)
        rec.effective_paddr = eff
        if instr.opcode == "Flush":
            rec.complete = cycle + cfg.hit_latency
            self._flush_line(cycle, eff)
            if instr.speculative_under == instr.id:
                self.resolve_at[instr.id] = cycle + cfg.resolve_latency
            return
        core = self.core_of[instr.id]
        sidx = self._set_of(eff, instr)
        line = self.caches[core].get(sidx)
        hit = line is not None and line.paddr == eff
        rec.hit = hit
        latency = cfg.hit_latency if hit else cfg.miss_latency
        rec.complete = cycle + latency
        if instr.opcode == "Write":
            send_inv = instr.committed or cfg.invalidation_on_speculative_write
            if send_inv:
                self._invalidate_remote(cycle, core, eff)
        if instr.speculative_under == instr.id:
            # permission check of an illegal access resolves later
            self.resolve_at[instr.id] = cycle + cfg.resolve_latency
        self.pending.append((rec.complete, instr, eff, hit))

    def _fence_ready(self, instr, cycle):
        t = self.prog.thread_of(instr.id)
        ready = cycle + 1
        for prior in t.instructions:
            if prior.id == instr.id:
                break
            if prior.id in self.resolve_at:
                ready = max(ready, self.resolve_at[prior.id] + 1)
            r = self.records[prior.id]
            if r.complete is not None:
                ready = max(ready, r.complete)
        return ready

    def _complete(self, cycle, instr, eff, hit):
        rec = self.records[instr.id]
        if instr.opcode == "Fence":
            rec.complete = cycle
            return
        core = self.core_of[instr.id]
        sidx = self._set_of(eff, instr)
        if instr.opcode == "Read":
            if not hit:
                self._install(cycle, core, sidx, eff, "S", self._coherent_value(eff))
            line = self.caches[core].get(sidx)
            value = line.value if line is not None and line.paddr == eff \
                else self._coherent_value(eff)
            if instr.committed:
                self.read_values[instr.id] = value
            else:
                self.read_values.setdefault(f"spec:{instr.id}", value)
        elif instr.opcode == "Write":
            if instr.committed:
                self._install(cycle, core, sidx, eff, "M", instr.written_value)
            elif self.cfg.write_allocate and not hit:
                # the ownership fill lands; the squashed data never does
                self._install(cycle, core, sidx, eff, "S", self._coherent_value(eff))

    def _effective_paddr(self, instr):
        base = self.prog.address_map.paddr(instr.vaddr)
        if instr.dep_on is None:
            return base
        dep_val = self.read_values.get(instr.dep_on,
                                       self.read_values.get(f"spec:{instr.dep_on}", 0))
        return base if dep_val == 1 else f"shadow:{instr.id}"

    def _set_of(self, paddr, instr):
        if paddr.startswith("shadow:"):
            return paddr  # shadow lines never collide with program lines
        return self.prog.address_map.set_of_paddr(paddr)

    def _coherent_value(self, paddr):
        for core, lines in sorted(self.caches.items()):
            for s, line in lines.items():
                if line.paddr == paddr and line.state == "M":
                    self.memory[paddr] = line.value
                    line.state = "S"
                    return line.value
        return self.memory.get(paddr, 0)

    def _install(self, cycle, core, sidx, paddr, state, value):
        evicted = self.caches[core].get(sidx)
        if evicted is not None and evicted.state == "M" and evicted.paddr != paddr:
            self.memory[evicted.paddr] = evicted.value
        self.caches[core][sidx] = _Line(paddr, state, value)
        self.line_events.append((cycle, core, sidx, paddr, state))

    def _invalidate_remote(self, cycle, core, paddr):
        for other, lines in sorted(self.caches.items()):
            if other == core:
                continue
            for sidx in list(lines):
                line = lines[sidx]
                if line.paddr == paddr:
                    if line.state == "M":
                        self.memory[paddr] = line.value
                    del lines[sidx]
                    self.line_events.append((cycle, other, sidx, paddr, "I"))

    def _flush_line(self, cycle, paddr):
        for core, lines in sorted(self.caches.items()):
            for sidx in list(lines):
                line = lines[sidx]
                if line.paddr == paddr:
                    if line.state == "M":
                        self.memory[paddr] = line.value
                    del lines[sidx]
                    self.line_events.append((cycle, core, sidx, paddr, "I"))

    def _guards_anything(self, instr):
        return any(i.speculative_under == instr.id and i.id != instr.id
                   for i in self.prog.instructions())

    def _squash_window(self, guard_id):
        for i in self.prog.instructions():
            if self.roots.get(i.id) == guard_id:
                rec = self.records[i.id]
                if rec.issue is None:
                    self.killed.add(i.id)
                rec.squashed = True

    def _check_swmr(self):
        holders = {}
        for core, lines in self.caches.items():
            for line in lines.values():
                holders.setdefault(line.paddr, []).append(line.state)
        for paddr, states in holders.items():
            if states.count("M") > 1 or ("M" in states and len(states) > 1):
                self.swmr_ok = False


def leak_check(prog: LitmusProgram, cfg: SimConfig) -> bool:
    """True iff the two secret worlds classify the timed access differently."""
    if prog.secret_paddr is None:
        raise ValueError("program designates no secret address")
    t0 = simulate(prog, cfg, 0)
    t1 = simulate(prog, cfg, 1)
    return t0.classification != t1.classification


def fence_leak_check(prog: LitmusProgram, cfg: SimConfig) -> bool:
    """leak_check for a fenced program; the fence stalls dependent issue until
    the speculation source resolves, so the expected answer is False."""
    return leak_check(prog, cfg)

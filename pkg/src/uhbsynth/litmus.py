"""Litmus test programs: threads of straight-line instructions over symbolic addresses.

Programs are immutable.  Speculation structure is explicit: an instruction
with `speculative_under` set executes under a guard (a mispredicted branch or
a permission-faulting access, which guards itself) and `squashed` marks that
it never commits.  `canonicalize` relabels addresses, threads, and ids to a
lexicographic-minimal form so isomorphic programs compare equal.
"""

import json
from dataclasses import dataclass, field, replace

from uhbsynth.diagnostics import Diagnostic
from uhbsynth.machine import MicroarchSpec

OPCODES = ("Read", "Write", "Flush", "Fence", "Branch")
MEMORY_OPCODES = ("Read", "Write", "Flush")
ACTORS = ("attacker", "victim")


@dataclass(frozen=True)
class Instruction:
    id: int
    opcode: str
    vaddr: str = None
    written_value: int = None
    dep_on: int = None              # prior Read in the same thread; address depends on its value
    speculative_under: int = None   # guard id; == id for a permission-faulting access
    squashed: bool = False

    @property
    def is_memory(self) -> bool:
        return self.opcode in ("Read", "Write")

    @property
    def committed(self) -> bool:
        return not self.squashed

    def brief(self) -> str:
        parts = {"Read": "R", "Write": "W", "Flush": "F", "Fence": "FEN", "Branch": "B"}[self.opcode]
        if self.vaddr is not None:
            parts += f" {self.vaddr}"
        if self.opcode == "Write":
            parts += f"={self.written_value}"
        if self.dep_on is not None:
            parts += f" dep={self.dep_on}"
        if self.speculative_under is not None:
            tag = "self" if self.speculative_under == self.id else str(self.speculative_under)
            parts += f" under={tag}"
        if self.squashed:
            parts += " squashed"
        return parts


@dataclass(frozen=True)
class Thread:
    actor: str
    core: int
    instructions: tuple


@dataclass(frozen=True)
class AddressMap:
    """vaddr -> (paddr, cache set index).  Aliases of one paddr share a set."""

    entries: tuple  # of (vaddr, paddr, set_index), sorted by vaddr

    @staticmethod
    def of(mapping) -> "AddressMap":
        return AddressMap(tuple(sorted((v, p, s) for v, (p, s) in mapping.items())))

    def paddr(self, vaddr: str) -> str:
        for v, p, _ in self.entries:
            if v == vaddr:
                return p
        raise KeyError(vaddr)

    def set_index(self, vaddr: str) -> int:
        for v, _, s in self.entries:
            if v == vaddr:
                return s
        raise KeyError(vaddr)

    def vaddrs(self):
        return [v for v, _, _ in self.entries]

    def paddrs(self):
        seen = []
        for _, p, _ in self.entries:
            if p not in seen:
                seen.append(p)
        return seen

    def set_of_paddr(self, paddr: str) -> int:
        for _, p, s in self.entries:
            if p == paddr:
                return s
        raise KeyError(paddr)


@dataclass(frozen=True)
class PermissionTable:
    """(actor, paddr) -> read/write permission.  Unlisted entries are allowed."""

    entries: tuple = ()  # of (actor, paddr, read_ok, write_ok), sorted

    @staticmethod
    def of(mapping) -> "PermissionTable":
        return PermissionTable(tuple(sorted(
            (a, p, bool(r), bool(w)) for (a, p), (r, w) in mapping.items())))

    def can_read(self, actor: str, paddr: str) -> bool:
        for a, p, r, _ in self.entries:
            if a == actor and p == paddr:
                return r
        return True

    def can_write(self, actor: str, paddr: str) -> bool:
        for a, p, _, w in self.entries:
            if a == actor and p == paddr:
                return w
        return True


@dataclass(frozen=True)
class LitmusProgram:
    threads: tuple
    address_map: AddressMap
    permissions: PermissionTable = PermissionTable()
    initial_values: tuple = ()   # of (paddr, value); unlisted paddrs start at 0
    roles: tuple = ()            # of (role name, instruction id); synthesis metadata
    secret_paddr: str = None     # the address whose content the test leaks

    def instructions(self):
        for t in self.threads:
            yield from t.instructions

    def instruction(self, iid: int) -> Instruction:
        for i in self.instructions():
            if i.id == iid:
                return i
        raise KeyError(iid)

    def thread_of(self, iid: int) -> Thread:
        for t in self.threads:
            if any(i.id == iid for i in t.instructions):
                return t
        raise KeyError(iid)

    def initial_value(self, paddr: str) -> int:
        for p, v in self.initial_values:
            if p == paddr:
                return v
        return 0

    def is_legal(self, instr: Instruction) -> bool:
        """Permission legality of a memory access for its actor."""
        if not instr.is_memory:
            return True
        try:
            actor = self.thread_of(instr.id).actor
            paddr = self.address_map.paddr(instr.vaddr)
        except KeyError:
            return True
        if instr.opcode == "Read":
            return self.permissions.can_read(actor, paddr)
        return self.permissions.can_write(actor, paddr)

    def role(self, name: str):
        for r, iid in self.roles:
            if r == name:
                return iid
        return None


def program_order(prog: LitmusProgram, a: int, b: int) -> bool:
    """True iff a and b are in one thread and a comes earlier."""
    for t in prog.threads:
        ids = [i.id for i in t.instructions]
        if a in ids and b in ids:
            return ids.index(a) < ids.index(b)
    return False


def guard_root(prog: LitmusProgram, instr: Instruction) -> Instruction:
    """The guard an instruction speculates under (may be the instruction itself)."""
    if instr.speculative_under is None:
        return None
    return prog.instruction(instr.speculative_under)


def well_formed(prog: LitmusProgram, spec: MicroarchSpec):
    """Check type invariants plus realizability of every opcode under `spec`.

    Returns (ok, diagnostics).
    """
    out = []

    def bad(code, msg):
        out.append(Diagnostic(code, msg))

    if not prog.threads:
        bad("no-threads", "program has no threads")
    cores = [t.core for t in prog.threads]
    if len(set(cores)) != len(cores):
        bad("core-duplicate", "two threads pinned to one core")
    for c in cores:
        if not (0 <= c < spec.cores):
            bad("core-range", f"core {c} out of range for {spec.cores}-core machine")
    ids = [i.id for i in prog.instructions()]
    if len(set(ids)) != len(ids):
        bad("id-duplicate", "instruction ids are not unique")

    mapped = set(prog.address_map.vaddrs())
    paddr_sets = {}
    for v, p, s in prog.address_map.entries:
        if p in paddr_sets and paddr_sets[p] != s:
            bad("alias-set-mismatch", f"paddr {p} mapped to sets {paddr_sets[p]} and {s}")
        paddr_sets[p] = s
        if not (0 <= s < spec.num_sets):
            bad("set-range", f"set index {s} out of range for {spec.num_sets}-set cache")

    for p, val in prog.initial_values:
        if val not in (0, 1):
            bad("value-domain", f"initial value of {p} outside {{0,1}}")

    for t in prog.threads:
        if t.actor not in ACTORS:
            bad("actor", f"unknown actor '{t.actor}'")
        if not t.instructions:
            bad("empty-thread", f"thread on core {t.core} has no instructions")
        pos = {i.id: k for k, i in enumerate(t.instructions)}
        for k, i in enumerate(t.instructions):
            if i.opcode not in OPCODES:
                bad("opcode", f"i{i.id}: unknown opcode '{i.opcode}'")
                continue
            needs_vaddr = i.opcode in MEMORY_OPCODES
            if needs_vaddr and i.vaddr is None:
                bad("vaddr-missing", f"i{i.id}: {i.opcode} requires a virtual address")
            if not needs_vaddr and i.vaddr is not None:
                bad("vaddr-forbidden", f"i{i.id}: {i.opcode} carries a virtual address")
            if i.vaddr is not None and i.vaddr not in mapped:
                bad("vaddr-unmapped", f"i{i.id}: vaddr {i.vaddr} not in address map")
            if i.opcode == "Write":
                if i.written_value not in (0, 1):
                    bad("value-domain", f"i{i.id}: written value outside {{0,1}}")
            elif i.written_value is not None:
                bad("value-forbidden", f"i{i.id}: only writes carry a value")
            if i.opcode == "Flush" and not spec.has_flush_instruction:
                bad("flush-unavailable", f"i{i.id}: machine has no flush instruction")

            if i.dep_on is not None:
                if i.opcode not in ("Read", "Write"):
                    bad("dep-opcode", f"i{i.id}: only memory accesses carry dependencies")
                elif i.dep_on not in pos or pos[i.dep_on] >= k:
                    bad("dep-order", f"i{i.id}: dep_on must name a prior same-thread instruction")
                else:
                    src = t.instructions[pos[i.dep_on]]
                    if src.opcode != "Read":
                        bad("dep-source", f"i{i.id}: dep_on must name a Read")
                    elif src.squashed and not i.squashed:
                        bad("dep-squash", f"i{i.id}: committed instruction depends on a squashed read")

            if i.squashed != (i.speculative_under is not None):
                bad("squash-guard", f"i{i.id}: squashed iff speculative_under is present")
            if (i.is_memory and i.vaddr in mapped and not prog.is_legal(i)
                    and not i.squashed):
                bad("illegal-commit", f"i{i.id}: permission-illegal access cannot commit")
            if i.speculative_under is not None:
                _check_guard(prog, spec, t, pos, k, i, bad)

    if any(i.vaddr is not None and i.vaddr not in mapped for i in prog.instructions()):
        pass  # already reported per instruction
    return (not out), out


def _check_guard(prog, spec, thread, pos, k, i, bad):
    sp = spec.speculation
    if i.speculative_under == i.id:
        # self-guarded: the access speculates past its own failed permission check
        if not i.is_memory:
            bad("guard-self", f"i{i.id}: only memory accesses can self-guard")
        elif prog.is_legal(i):
            bad("guard-self-legal", f"i{i.id}: self-guarded access must be permission-illegal")
        elif not sp.allows_speculative_loads_past_permission_check:
            bad("speculation-unavailable",
                f"i{i.id}: machine does not speculate past permission checks")
    else:
        if i.speculative_under not in pos or pos[i.speculative_under] >= k:
            bad("guard-order", f"i{i.id}: guard must be a prior same-thread instruction")
            return
        g = thread.instructions[pos[i.speculative_under]]
        if g.opcode == "Branch":
            if not sp.allows_branch_misprediction:
                bad("speculation-unavailable", f"i{i.id}: machine does not mispredict branches")
        elif g.is_memory and g.squashed and not prog.is_legal(g):
            if not sp.allows_speculative_loads_past_permission_check:
                bad("speculation-unavailable",
                    f"i{i.id}: machine does not speculate past permission checks")
        else:
            bad("guard-kind", f"i{i.id}: guard must be a branch or a faulting access")
    if i.opcode == "Flush" and not spec.speculation.allows_speculative_flush:
        bad("speculative-flush-unavailable", f"i{i.id}: machine does not flush speculatively")


def render_program(prog: LitmusProgram) -> str:
    """Stable human-readable listing, also used as a canonical sort key."""
    lines = []
    for t in prog.threads:
        instrs = "; ".join(i.brief() for i in t.instructions)
        lines.append(f"T{t.core} {t.actor}: {instrs}")
    for v, p, s in prog.address_map.entries:
        lines.append(f"map {v} -> {p} set={s}")
    for a, p, r, w in prog.permissions.entries:
        lines.append(f"perm {a} {p} read={'y' if r else 'n'} write={'y' if w else 'n'}")
    for p, val in sorted(prog.initial_values):
        lines.append(f"init {p}={val}")
    return "\n".join(lines)


def canonicalize(prog: LitmusProgram) -> LitmusProgram:
    """Lexicographic-minimal relabeling of addresses, sets, ids, and threads."""
    best = None
    for order in _thread_orders(prog.threads):
        cand = _relabel(prog, order)
        key = render_program(cand)
        if best is None or key < best[0]:
            best = (key, cand)
    return best[1]


def _thread_orders(threads):
    n = len(threads)
    if n == 1:
        yield list(threads)
        return
    import itertools
    for perm in itertools.permutations(threads):
        yield list(perm)


def _relabel(prog: LitmusProgram, thread_order) -> LitmusProgram:
    id_map = {}
    nid = 0
    for t in thread_order:
        for i in t.instructions:
            id_map[i.id] = nid
            nid += 1
    vmap, pmap, smap = {}, {}, {}
    for t in thread_order:
        for i in t.instructions:
            if i.vaddr is not None and i.vaddr not in vmap:
                vmap[i.vaddr] = f"v{len(vmap)}"
                p = prog.address_map.paddr(i.vaddr)
                if p not in pmap:
                    pmap[p] = f"p{len(pmap)}"
                s = prog.address_map.set_index(i.vaddr)
                if s not in smap:
                    smap[s] = len(smap)
    new_threads = []
    for core, t in enumerate(thread_order):
        instrs = tuple(Instruction(
            id=id_map[i.id],
            opcode=i.opcode,
            vaddr=vmap.get(i.vaddr) if i.vaddr is not None else None,
            written_value=i.written_value,
            dep_on=id_map[i.dep_on] if i.dep_on is not None else None,
            speculative_under=id_map[i.speculative_under] if i.speculative_under is not None else None,
            squashed=i.squashed,
        ) for i in t.instructions)
        new_threads.append(Thread(t.actor, core, instrs))
    amap = {}
    for v, p, s in prog.address_map.entries:
        if v in vmap:
            amap[vmap[v]] = (pmap[p], smap[s])
    perms = {}
    for a, p, r, w in prog.permissions.entries:
        if p in pmap and (not r or not w):
            perms[(a, pmap[p])] = (r, w)
    init = tuple(sorted((pmap[p], val) for p, val in prog.initial_values if p in pmap and val != 0))
    roles = tuple(sorted(
        (r, id_map[iid]) for r, iid in prog.roles if iid in id_map))
    secret = pmap.get(prog.secret_paddr) if prog.secret_paddr else None
    return LitmusProgram(
        threads=tuple(new_threads),
        address_map=AddressMap.of(amap),
        permissions=PermissionTable.of(perms),
        initial_values=init,
        roles=roles,
        secret_paddr=secret,
    )


def to_json(prog: LitmusProgram) -> str:
    doc = {
        "threads": [
            {
                "actor": t.actor,
                "core": t.core,
                "instructions": [
                    {
                        "id": i.id,
                        "opcode": i.opcode,
                        "vaddr": i.vaddr,
                        "written_value": i.written_value,
                        "dep_on": i.dep_on,
                        "speculative_under": i.speculative_under,
                        "squashed": i.squashed,
                    }
                    for i in t.instructions
                ],
            }
            for t in prog.threads
        ],
        "address_map": {v: {"paddr": p, "set": s} for v, p, s in prog.address_map.entries},
        "permissions": [
            {"actor": a, "paddr": p, "read": r, "write": w}
            for a, p, r, w in prog.permissions.entries
        ],
        "initial_values": {p: v for p, v in prog.initial_values},
        "roles": {r: iid for r, iid in prog.roles},
        "secret_paddr": prog.secret_paddr,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> LitmusProgram:
    doc = json.loads(text)
    threads = tuple(
        Thread(
            actor=t["actor"],
            core=t["core"],
            instructions=tuple(
                Instruction(
                    id=i["id"],
                    opcode=i["opcode"],
                    vaddr=i.get("vaddr"),
                    written_value=i.get("written_value"),
                    dep_on=i.get("dep_on"),
                    speculative_under=i.get("speculative_under"),
                    squashed=bool(i.get("squashed", False)),
                )
                for i in t["instructions"]
            ),
        )
        for t in doc["threads"]
    )
    amap = {v: (e["paddr"], e["set"]) for v, e in doc.get("address_map", {}).items()}
    perms = {(e["actor"], e["paddr"]): (e["read"], e["write"]) for e in doc.get("permissions", [])}
    init = tuple(sorted(doc.get("initial_values", {}).items()))
    roles = tuple(sorted(doc.get("roles", {}).items()))
    return LitmusProgram(
        threads=threads,
        address_map=AddressMap.of(amap),
        permissions=PermissionTable.of(perms),
        initial_values=init,
        roles=roles,
        secret_paddr=doc.get("secret_paddr"),
    )

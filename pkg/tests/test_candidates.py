"""Candidate enumeration: hand counts, naive-generator agreement, canonicity."""

from itertools import product

import pytest

from uhbsynth.candidates import SynthesisBounds, enumerate_candidates, estimate_candidates
from uhbsynth.litmus import (
    AddressMap,
    Instruction,
    LitmusProgram,
    PermissionTable,
    Thread,
    canonicalize,
    render_program,
    well_formed,
)


def test_size_one_attacker_hand_enumeration(ooo):
    progs = list(enumerate_candidates(ooo, SynthesisBounds(1, 1, 1, 1),
                                      actors=("attacker",)))
    briefs = sorted(p.threads[0].instructions[0].brief() for p in progs)
    assert briefs == sorted([
        "R v0",
        "R v0 under=self squashed",
        "W v0=1",
        "W v0=1 under=self squashed",
        "F v0",
        "FEN",
    ])
    assert len(progs) == 6


def test_size_one_no_flush_machine(ooo):
    import dataclasses

    spec = dataclasses.replace(ooo, has_flush_instruction=False)
    progs = list(enumerate_candidates(spec, SynthesisBounds(1, 1, 1, 1),
                                      actors=("attacker",)))
    assert len(progs) == 5  # the flush option disappears


def naive_candidates(spec, bounds):
    """Independent brute-force generator over the documented candidate grammar:
    build every instruction tuple combinatorially, then keep the well-formed
    ones and quotient by canonicalization.

    Deliberately dumb: generates ill-formed combinations and filters, rather
    than constructing only valid ones.
    """
    assert bounds.max_threads == 1 and bounds.max_vaddrs == 1 and bounds.max_paddrs == 1
    amap = AddressMap.of({"v0": ("p0", 0)})
    seen = {}
    opcode_space = ["Read", "Write", "Flush", "Fence", "Branch"]
    for n in range(1, bounds.max_instructions + 1):
        slots = []
        for pos in range(n):
            opts = []
            for op in opcode_space:
                vaddrs = ["v0"] if op in ("Read", "Write", "Flush") else [None]
                deps = [None] + list(range(pos))
                unders = [None, pos] + list(range(pos))
                illegal = [False, True]
                for v, d, u, il in product(vaddrs, deps, unders, illegal):
                    opts.append((op, v, d, u, il))
            slots.append(opts)
        for combo in product(*slots):
            prog = _build_naive(combo, amap)
            if prog is None:
                continue
            ok, _ = well_formed(prog, spec)
            if not ok:
                continue
            if not _grammar_ok(prog):
                continue
            canon = canonicalize(prog)
            seen.setdefault(render_program(canon), canon)
    return list(seen.values())


def _build_naive(combo, amap):
    instrs = []
    perm = {}
    for pos, (op, v, d, u, il) in enumerate(combo):
        if il:
            if op not in ("Read", "Write") or u != pos:
                return None
            perm[("attacker", "p0")] = (
                op != "Read" and perm.get(("attacker", "p0"), (True, True))[0],
                op != "Write" and perm.get(("attacker", "p0"), (True, True))[1])
        instrs.append(Instruction(
            id=pos, opcode=op, vaddr=v,
            written_value=1 if op == "Write" else None,
            dep_on=d, speculative_under=u, squashed=u is not None))
    try:
        return LitmusProgram(
            (Thread("attacker", 0, tuple(instrs)),), amap,
            PermissionTable.of(perm))
    except Exception:
        return None


def _grammar_ok(prog):
    """The documented enumeration grammar beyond type invariants: one window
    per thread rooted at its guard, committed attacker accesses carry no
    dependency, dependencies come from squashed reads, illegal accesses are
    self-guarded roots, branches guard something, fences and branches have no
    dependencies."""
    for t in prog.threads:
        seq = t.instructions
        roots = set()
        for k, i in enumerate(seq):
            if i.opcode == "Branch":
                if i.squashed:
                    return False
                if not any(j.speculative_under == i.id for j in seq):
                    return False
                roots.add(i.id)
            if i.speculative_under == i.id:
                roots.add(i.id)
        if len(roots) > 1:
            return False
        for k, i in enumerate(seq):
            if i.dep_on is not None:
                if i.opcode not in ("Read", "Write"):
                    return False
                src = next(j for j in seq if j.id == i.dep_on)
                if not src.squashed or not i.squashed:
                    return False
            if i.speculative_under is not None and i.speculative_under != i.id:
                if i.speculative_under not in roots:
                    return False
            if i.opcode in ("Read", "Write") and not prog.is_legal(i):
                if i.speculative_under != i.id:
                    return False
    return True


@pytest.mark.parametrize("n", [1, 2])
def test_counts_match_naive_generator(ooo, n):
    bounds = SynthesisBounds(n, 1, 1, 1)
    ours = {render_program(p) for p in
            enumerate_candidates(ooo, bounds, actors=("attacker",))}
    naive = {render_program(p) for p in naive_candidates(ooo, bounds)}
    assert ours == naive


def test_enumeration_sound_and_canonical(two_core):
    bounds = SynthesisBounds(3, 2, 2, 2)
    seen = set()
    n = 0
    for prog in enumerate_candidates(two_core, bounds):
        n += 1
        ok, diags = well_formed(prog, two_core)
        assert ok, diags
        canon = render_program(canonicalize(prog))
        assert canon == render_program(prog)  # already canonical
        assert canon not in seen              # pairwise non-isomorphic
        seen.add(canon)
    assert n > 500


def test_estimate_is_upper_bound(ooo, two_core):
    for spec in (ooo, two_core):
        for b in (SynthesisBounds(1, 1, 1, 1), SynthesisBounds(2, 2, 2, 2),
                  SynthesisBounds(3, 2, 2, 2)):
            actual = sum(1 for _ in enumerate_candidates(spec, b))
            assert estimate_candidates(spec, b) >= actual


def test_bounds_validation():
    with pytest.raises(ValueError):
        SynthesisBounds(0, 1, 1, 1).validate()

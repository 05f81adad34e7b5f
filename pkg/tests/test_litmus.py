"""Program model: well-formedness diagnostics, canonicalization, serialization."""

import dataclasses

import pytest

from uhbsynth.litmus import (
    AddressMap,
    Instruction,
    LitmusProgram,
    PermissionTable,
    Thread,
    canonicalize,
    from_json,
    render_program,
    to_json,
    well_formed,
)
from conftest import AMAP2, meltdown_prog, single_read_prog, spectre_prime_prog


def codes(result):
    ok, diags = result
    return {d.code for d in diags}


def test_minimal_program_is_well_formed(ooo):
    ok, diags = well_formed(single_read_prog(), ooo)
    assert ok and not diags


def test_flush_requires_flush_instruction(ooo):
    spec = dataclasses.replace(ooo, has_flush_instruction=False)
    prog = LitmusProgram(
        (Thread("attacker", 0, (Instruction(0, "Flush", "v0"),)),),
        AddressMap.of({"v0": ("p0", 0)}))
    assert "flush-unavailable" in codes(well_formed(prog, spec))


def test_dep_on_later_instruction_rejected(ooo):
    prog = LitmusProgram(
        (Thread("attacker", 0, (
            Instruction(0, "Read", "v0", dep_on=1),
            Instruction(1, "Read", "v0"),
        )),),
        AddressMap.of({"v0": ("p0", 0)}))
    assert "dep-order" in codes(well_formed(prog, ooo))


def test_squashed_requires_guard(ooo):
    prog = LitmusProgram(
        (Thread("attacker", 0, (Instruction(0, "Read", "v0", squashed=True),)),),
        AddressMap.of({"v0": ("p0", 0)}))
    assert "squash-guard" in codes(well_formed(prog, ooo))


def test_illegal_access_cannot_commit(ooo):
    prog = LitmusProgram(
        (Thread("attacker", 0, (Instruction(0, "Read", "v0"),)),),
        AddressMap.of({"v0": ("p0", 0)}),
        PermissionTable.of({("attacker", "p0"): (False, True)}))
    assert "illegal-commit" in codes(well_formed(prog, ooo))


def test_committed_dep_on_squashed_read_rejected(ooo):
    prog = LitmusProgram(
        (Thread("attacker", 0, (
            Instruction(0, "Read", "v1", speculative_under=0, squashed=True),
            Instruction(1, "Read", "v0", dep_on=0),
        )),),
        AMAP2,
        PermissionTable.of({("attacker", "p1"): (False, True)}))
    assert "dep-squash" in codes(well_formed(prog, ooo))


def test_duplicate_cores_rejected(two_core):
    prog = LitmusProgram(
        (
            Thread("attacker", 0, (Instruction(0, "Read", "v0"),)),
            Thread("victim", 0, (Instruction(1, "Read", "v0"),)),
        ),
        AddressMap.of({"v0": ("p0", 0)}))
    assert "core-duplicate" in codes(well_formed(prog, two_core))


def test_alias_set_mismatch_rejected(ooo):
    amap = AddressMap(entries=(("v0", "p0", 0), ("v1", "p0", 1)))
    prog = LitmusProgram(
        (Thread("attacker", 0, (Instruction(0, "Read", "v0"),)),), amap)
    assert "alias-set-mismatch" in codes(well_formed(prog, ooo))


def test_speculation_flags_gate_guards(ooo):
    from uhbsynth.machine import SpeculationPolicy
    spec = dataclasses.replace(ooo, speculation=SpeculationPolicy(False, False, False))
    ok, diags = well_formed(meltdown_prog(roles=False), spec)
    assert not ok
    assert "speculation-unavailable" in {d.code for d in diags}


def test_canonicalize_first_use_order():
    amap = AddressMap.of({"y": ("q", 1), "x": ("r", 0)})
    prog = LitmusProgram(
        (Thread("attacker", 0, (
            Instruction(0, "Read", "y"),
            Instruction(1, "Read", "x"),
        )),),
        amap)
    canon = canonicalize(prog)
    assert canon.address_map.vaddrs() == ["v0", "v1"]
    assert canon.threads[0].instructions[0].vaddr == "v0"
    assert canon.address_map.paddr("v0") == "p0"
    assert canon.address_map.set_index("v0") == 0


def test_canonicalize_idempotent_on_shapes():
    for prog in (meltdown_prog(), spectre_prime_prog(), single_read_prog()):
        c1 = canonicalize(prog)
        assert canonicalize(c1) == c1


def test_isomorphic_programs_canonicalize_equal():
    a = spectre_prime_prog(roles=False)
    # same program with threads listed in the other order and renamed symbols
    amap = AddressMap.of({"w0": ("q0", 0), "w1": ("q1", 1)})
    b = LitmusProgram(
        (
            Thread("attacker", 1, (
                Instruction(10, "Branch"),
                Instruction(11, "Read", "w1", speculative_under=10, squashed=True),
                Instruction(12, "Write", "w0", written_value=1, dep_on=11,
                            speculative_under=10, squashed=True),
            )),
            Thread("attacker", 0, (
                Instruction(13, "Read", "w0"),
                Instruction(14, "Read", "w0"),
            )),
        ),
        amap)
    assert canonicalize(a) == canonicalize(b)


def test_json_round_trip():
    for prog in (meltdown_prog(), spectre_prime_prog()):
        again = from_json(to_json(prog))
        assert again == prog


def test_json_is_deterministic():
    assert to_json(meltdown_prog()) == to_json(meltdown_prog())


def test_render_program_stable():
    text = render_program(meltdown_prog())
    assert "T0 attacker" in text
    assert "map v0 -> p0 set=0" in text
    assert "perm attacker p1 read=n write=y" in text

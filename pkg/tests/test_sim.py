"""Timing simulator: leak checks, ablations, fences, architectural cleanliness."""

import dataclasses

import pytest

from uhbsynth.litmus import AddressMap, Instruction, LitmusProgram, PermissionTable, Thread
from uhbsynth.sim import SimConfig, SimDeadlock, fence_leak_check, leak_check, simulate
from conftest import (
    AMAP2,
    meltdown_prime_prog,
    meltdown_prog,
    spectre_prime_prog,
    spectre_prog,
)

CFG = SimConfig()


def test_config_invariant():
    with pytest.raises(ValueError):
        SimConfig(hit_latency=70, threshold=60, miss_latency=100).validate()
    with pytest.raises(ValueError):
        SimConfig(hit_latency=10, threshold=60, miss_latency=50).validate()


def test_meltdown_leaks():
    prog = meltdown_prog()
    t1 = simulate(prog, CFG, 1)
    t0 = simulate(prog, CFG, 0)
    assert t1.classification == "hit" and t1.inferred_secret_bit == 1
    assert t0.classification == "miss" and t0.inferred_secret_bit == 0
    assert leak_check(prog, CFG)


def test_spectre_leaks():
    assert leak_check(spectre_prog(), CFG)


def test_spectre_prime_leaks_via_invalidation():
    prog = spectre_prime_prog()
    t1 = simulate(prog, CFG, 1)
    t0 = simulate(prog, CFG, 0)
    assert t1.classification == "miss" and t1.inferred_secret_bit == 1
    assert t0.classification == "hit" and t0.inferred_secret_bit == 0
    assert leak_check(prog, CFG)
    assert t1.swmr_ok and t0.swmr_ok


def test_meltdown_prime_leaks():
    assert leak_check(meltdown_prime_prog(), CFG)


def test_invalidation_ablation_flips_prime_results_only():
    quiet = dataclasses.replace(CFG, invalidation_on_speculative_write=False)
    assert not leak_check(spectre_prime_prog(), quiet)
    assert not leak_check(meltdown_prime_prog(), quiet)
    assert leak_check(meltdown_prog(), quiet)
    assert leak_check(spectre_prog(), quiet)


def test_speculation_disabled_second_accesses_hit():
    cfg = dataclasses.replace(CFG, speculation_enabled=False)
    prog = spectre_prime_prog()
    t = simulate(prog, cfg, 1)
    assert t.classification == "hit"  # nothing evicts the primed line
    for iid, rec in t.records.items():
        if prog.instruction(iid).squashed:
            assert rec.issue is None


def fenced_spectre(position="window"):
    instrs = [
        Instruction(0, "Flush", "v0"),
        Instruction(1, "Branch"),
        Instruction(2, "Read", "v1", speculative_under=1, squashed=True),
        Instruction(3, "Read", "v0", dep_on=2, speculative_under=1, squashed=True),
        Instruction(4, "Read", "v0"),
    ]
    if position == "window":
        instrs.insert(2, Instruction(5, "Fence", speculative_under=1, squashed=True))
    else:
        instrs.append(Instruction(5, "Fence"))
    return LitmusProgram((Thread("attacker", 0, tuple(instrs)),), AMAP2,
                         roles=(("reload", 4),), secret_paddr="p1")


def fenced_spectre_prime():
    return LitmusProgram(
        (
            Thread("attacker", 0, (
                Instruction(0, "Read", "v0"),
                Instruction(1, "Read", "v0"),
            )),
            Thread("attacker", 1, (
                Instruction(2, "Branch"),
                Instruction(5, "Fence", speculative_under=2, squashed=True),
                Instruction(3, "Read", "v1", speculative_under=2, squashed=True),
                Instruction(4, "Write", "v0", written_value=1, dep_on=3,
                            speculative_under=2, squashed=True),
            )),
        ),
        AMAP2,
        roles=(("evictor", 4), ("prime", 0), ("probe", 1)),
        secret_paddr="p1")


def test_fence_between_source_and_access_stops_the_leak():
    assert not fence_leak_check(fenced_spectre("window"), CFG)
    assert not fence_leak_check(fenced_spectre_prime(), CFG)


def test_fence_after_reload_does_not_help():
    assert leak_check(fenced_spectre("after"), CFG)


def test_architectural_cleanliness():
    """Squashed instructions leave no architectural trace: final memory and
    committed read values equal those of the squash-removed program."""
    full = spectre_prime_prog(roles=False)
    t_full = simulate(dataclasses.replace(full, secret_paddr="p1"), CFG, 1)
    removed = LitmusProgram(
        (
            Thread("attacker", 0, (
                Instruction(0, "Read", "v0"),
                Instruction(1, "Read", "v0"),
            )),
            Thread("attacker", 1, (Instruction(2, "Branch"),)),
        ),
        AMAP2, secret_paddr="p1")
    t_removed = simulate(removed, CFG, 1)
    assert t_full.final_memory == t_removed.final_memory
    committed = {iid: v for iid, v in t_full.read_values.items() if isinstance(iid, int)}
    committed_removed = {iid: v for iid, v in t_removed.read_values.items()
                         if isinstance(iid, int)}
    assert committed == committed_removed


def test_microarchitectural_residue():
    """The squashed window does change cache line state (the leak's carrier)."""
    prog = dataclasses.replace(meltdown_prog(), roles=(), secret_paddr="p1")
    t = simulate(prog, CFG, 1)
    touched = {(core, paddr) for _, core, _, paddr, state in t.line_events if state != "I"}
    assert (0, "p1") in touched  # the squashed illegal read filled its line


def test_write_allocate_fill_carries_old_value():
    prog = LitmusProgram(
        (Thread("attacker", 0, (
            Instruction(0, "Read", "v1", speculative_under=0, squashed=True),
            Instruction(1, "Write", "v0", written_value=1, dep_on=0,
                        speculative_under=0, squashed=True),
            Instruction(2, "Read", "v0"),
        )),),
        AMAP2,
        PermissionTable.of({("attacker", "p1"): (False, True)}),
        roles=(("reload", 2),), secret_paddr="p1")
    t1 = simulate(prog, CFG, 1)
    assert t1.classification == "hit"       # the ownership fill landed
    assert t1.read_values[2] == 0           # with the old value, not the squashed 1
    assert t1.final_memory["p0"] == 0
    assert leak_check(prog, CFG)


def test_secret_required_for_leak_check():
    prog = LitmusProgram(
        (Thread("attacker", 0, (Instruction(0, "Read", "v0"),)),),
        AddressMap.of({"v0": ("p0", 0)}))
    with pytest.raises(ValueError):
        leak_check(prog, CFG)


def test_determinism():
    prog = spectre_prime_prog()
    a = simulate(prog, CFG, 1)
    b = simulate(prog, CFG, 1)
    assert a.line_events == b.line_events
    assert {i: (r.issue, r.complete) for i, r in a.records.items()} == \
           {i: (r.issue, r.complete) for i, r in b.records.items()}


def test_runtime_swmr_holds_across_golden_corpus():
    for prog in (meltdown_prog(), spectre_prog(), meltdown_prime_prog(),
                 spectre_prime_prog()):
        for secret in (0, 1):
            assert simulate(prog, CFG, secret).swmr_ok

"""Synthesis: soundness vs the unpruned pipeline, verification, minimization,
fence mitigation."""

import dataclasses

import pytest

from uhbsynth.candidates import SynthesisBounds
from uhbsynth.executions import iter_executions
from uhbsynth.litmus import render_program
from uhbsynth.patterns import flush_reload_pattern, match, prime_probe_pattern
from uhbsynth.synth import (
    BoundsCeilingError,
    fence_axioms,
    filter_minimal,
    has_fenced_window,
    mitigation_check,
    strip_annotations,
    synthesize,
    verify_result,
)


def result_keys(results):
    return [(render_program(strip_annotations(r.program)),
             r.witness.dedup_key(), r.embedding, r.variant) for r in results]


def test_small_flush_reload_synthesis(ooo):
    results = synthesize(ooo, flush_reload_pattern(), SynthesisBounds(4, 1, 2, 2),
                         actors=("attacker",))
    variants = {r.variant for r in results}
    assert "meltdown_shape" in variants
    assert "write_allocate_write_reload" in variants
    for r in results:
        assert verify_result(r, ooo, flush_reload_pattern())


def test_synthesis_equals_unpruned_pipeline_flush_reload(ooo):
    """Soundness and completeness of both accelerations at small bounds."""
    fr = flush_reload_pattern()
    bounds = SynthesisBounds(4, 1, 2, 2)
    pruned = synthesize(ooo, fr, bounds, actors=("attacker",))
    brute = synthesize(ooo, fr, bounds, actors=("attacker",), prune=False)
    assert result_keys(pruned) == result_keys(brute)


def test_synthesis_equals_unpruned_pipeline_prime_probe(two_core):
    pp = prime_probe_pattern()
    bounds = SynthesisBounds(4, 2, 2, 2)
    pruned = synthesize(two_core, pp, bounds)
    brute = synthesize(two_core, pp, bounds, prune=False)
    assert result_keys(pruned) == result_keys(brute)


def test_no_speculation_means_no_squashed_fillers(ooo):
    from uhbsynth.machine import SpeculationPolicy

    quiet = dataclasses.replace(ooo, speculation=SpeculationPolicy(False, False, False))
    results = synthesize(quiet, flush_reload_pattern(), SynthesisBounds(4, 1, 2, 2),
                         actors=("attacker",))
    for r in results:
        filler = r.program.instruction(r.program.role("filler"))
        assert not filler.squashed
    assert results == []  # one core and no victim: no committed filler exists either


def test_spectral_write_visibility_ablation(two_core):
    """Without visible speculative write requests there are no two-core
    speculative-invalidation tests."""
    quiet = dataclasses.replace(
        two_core, coherence=dataclasses.replace(
            two_core.coherence, speculative_write_requests_visible=False))
    results = synthesize(quiet, prime_probe_pattern(), SynthesisBounds(4, 2, 2, 2))
    for r in results:
        ev = r.program.instruction(r.program.role("evictor"))
        assert not (ev.opcode == "Write" and ev.squashed)


def test_results_sorted_and_deterministic(two_core):
    pp = prime_probe_pattern()
    a = synthesize(two_core, pp, SynthesisBounds(4, 2, 2, 2))
    b = synthesize(two_core, pp, SynthesisBounds(4, 2, 2, 2))
    assert result_keys(a) == result_keys(b)
    keys = [r.sort_key() for r in a]
    assert keys == sorted(keys)


def test_worker_count_does_not_change_results(ooo):
    fr = flush_reload_pattern()
    bounds = SynthesisBounds(4, 1, 2, 2)
    one = synthesize(ooo, fr, bounds, actors=("attacker",), workers=1)
    four = synthesize(ooo, fr, bounds, actors=("attacker",), workers=4)
    assert result_keys(one) == result_keys(four)


def test_verify_rejects_tampered_witness(ooo):
    fr = flush_reload_pattern()
    r = synthesize(ooo, fr, SynthesisBounds(4, 1, 2, 2), actors=("attacker",))[0]
    assert verify_result(r, ooo, fr)
    tampered = dataclasses.replace(
        r, witness=dataclasses.replace(r.witness, edges=r.witness.edges[1:]))
    assert not verify_result(tampered, ooo, fr)


def test_verify_round_trips_through_json(ooo):
    from uhbsynth.litmus import from_json, to_json
    from uhbsynth.serialize import graph_from_json, graph_to_json

    fr = flush_reload_pattern()
    results = synthesize(ooo, fr, SynthesisBounds(4, 1, 2, 2), actors=("attacker",))
    for r in results[:10]:
        prog = from_json(to_json(r.program))
        witness = graph_from_json(graph_to_json(r.witness), program=strip_annotations(prog))
        again = dataclasses.replace(r, program=prog, witness=witness)
        assert verify_result(again, ooo, fr)


def test_filter_minimal_drops_fence_padded_variant(ooo):
    fr = flush_reload_pattern()
    results = synthesize(ooo, fr, SynthesisBounds(5, 1, 2, 2), actors=("attacker",))
    kept = filter_minimal(results)
    sizes = {}
    for r in results:
        n = sum(len(t.instructions) for t in r.program.threads)
        sizes.setdefault(r.variant, set()).add(n)
    # the four-instruction meltdown shape survives; its five-instruction
    # fence-padded extensions do not
    melt = [r for r in kept if r.variant == "meltdown_shape"]
    assert melt
    assert {sum(len(t.instructions) for t in r.program.threads) for r in melt} == {4}
    assert filter_minimal(kept) == kept  # idempotent


def test_prime_removal_does_not_subsume(two_core):
    """Dropping the priming read leaves a program that is not a result, so
    minimization keeps the full shape."""
    pp = prime_probe_pattern()
    results = synthesize(two_core, pp, SynthesisBounds(5, 2, 2, 2),
                         candidate_ceiling=10**8)
    primes = [r for r in results if r.variant == "spectre_prime_shape"]
    assert primes
    kept = filter_minimal(results)
    assert any(r.variant == "spectre_prime_shape" for r in kept)


def test_bounds_ceiling_guard(two_core):
    with pytest.raises(BoundsCeilingError):
        synthesize(two_core, prime_probe_pattern(), SynthesisBounds(6, 2, 2, 2),
                   candidate_ceiling=1000)


def test_axiom_monotonicity(ooo):
    """Adding an axiom never adds programs to the result set."""
    fr = flush_reload_pattern()
    bounds = SynthesisBounds(4, 1, 2, 2)
    base = {render_program(strip_annotations(r.program))
            for r in synthesize(ooo, fr, bounds, actors=("attacker",))}
    stricter = dataclasses.replace(ooo, axioms=ooo.axioms + fence_axioms(ooo))
    after = {render_program(strip_annotations(r.program))
             for r in synthesize(stricter, fr, bounds, actors=("attacker",))}
    assert after <= base


def test_fenced_window_candidate_filter(ooo):
    from conftest import meltdown_prog

    assert not has_fenced_window(meltdown_prog(roles=False))
    from uhbsynth.litmus import AddressMap, Instruction, LitmusProgram, PermissionTable, Thread

    fenced = LitmusProgram(
        (Thread("attacker", 0, (
            Instruction(0, "Read", "v1", speculative_under=0, squashed=True),
            Instruction(1, "Fence", speculative_under=0, squashed=True),
            Instruction(2, "Read", "v0", dep_on=0, speculative_under=0, squashed=True),
        )),),
        AddressMap.of({"v0": ("p0", 0), "v1": ("p1", 1)}),
        PermissionTable.of({("attacker", "p1"): (False, True)}))
    assert has_fenced_window(fenced)


def test_mitigation_empties_speculative_fillers(ooo, two_core):
    fr = flush_reload_pattern()
    res = mitigation_check(ooo, fr, SynthesisBounds(5, 1, 2, 2), fence_axioms(ooo),
                           actors=("attacker",))
    assert [r for r in res
            if r.program.instruction(r.program.role("filler")).squashed] == []
    pp = prime_probe_pattern()
    res2 = mitigation_check(two_core, pp, SynthesisBounds(5, 2, 2, 2),
                            fence_axioms(two_core), candidate_ceiling=10**8)
    assert [r for r in res2
            if r.program.instruction(r.program.role("evictor")).squashed] == []


def test_vacuous_fence_axiom_changes_nothing(ooo):
    """With no fence axioms, the mitigation search equals plain synthesis
    restricted to fence-containing candidates."""
    fr = flush_reload_pattern()
    bounds = SynthesisBounds(5, 1, 2, 2)
    vacuous = mitigation_check(ooo, fr, bounds, (), actors=("attacker",))
    plain = synthesize(ooo, fr, bounds, actors=("attacker",),
                       candidate_filter=has_fenced_window)
    assert result_keys(vacuous) == result_keys(plain)
    assert vacuous  # speculative fillers do exist when nothing is ordered

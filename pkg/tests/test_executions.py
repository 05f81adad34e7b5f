"""Execution engine: sourcing oracles, coherence audits, determinism."""

import dataclasses

import pytest

from uhbsynth.executions import enumerate_executions
from uhbsynth.graph import (
    CAUSE_FLUSHED,
    CAUSE_INVALIDATED,
    InvRecvNode,
    InvSendNode,
    Reach,
    UhbGraph,
    ViclNode,
    check_acyclic,
    check_dv,
    check_swmr,
    check_vicl_pairing,
)
from uhbsynth.litmus import AddressMap, Instruction, LitmusProgram, Thread
from uhbsynth.machine import SpeculationPolicy
from conftest import (
    AMAP2,
    meltdown_prime_prog,
    meltdown_prog,
    single_read_prog,
    spectre_prime_prog,
    spectre_prog,
)

AMAP1 = AddressMap.of({"v0": ("p0", 0)})


def one_thread(*instrs):
    return LitmusProgram((Thread("attacker", 0, tuple(instrs)),), AMAP1)


def test_single_cold_read_has_one_execution(ooo):
    graphs = enumerate_executions(ooo, single_read_prog())
    assert len(graphs) == 1
    g = graphs[0]
    src = g.source_of(0)
    assert src.creator == 0 and src.kind == "fill"
    assert check_vicl_pairing(g)


def test_write_sources_following_read(ooo):
    # a store then a load of one address: the store's lifetime feeds the load
    prog = one_thread(
        Instruction(0, "Write", "v0", written_value=1),
        Instruction(1, "Read", "v0"))
    graphs = enumerate_executions(ooo, prog)
    assert len(graphs) == 1
    g = graphs[0]
    src = g.source_of(1)
    assert src.creator == 0 and src.kind == "write"
    assert g.value_of(src) == 1
    assert not [v for v in g.created_by(1)]


def test_cold_read_fill_sources_second_read(ooo):
    prog = one_thread(
        Instruction(0, "Read", "v0"),
        Instruction(1, "Read", "v0"))
    graphs = enumerate_executions(ooo, prog)
    assert len(graphs) == 1
    g = graphs[0]
    assert g.source_of(0).creator == 0
    assert g.source_of(1) == g.source_of(0)


def test_ill_formed_program_rejected(ooo):
    prog = one_thread(Instruction(0, "Read", "v0", squashed=True))
    with pytest.raises(ValueError):
        enumerate_executions(ooo, prog)


def test_meltdown_executions_include_reload_hit(ooo):
    graphs = enumerate_executions(ooo, meltdown_prog())
    hit = [g for g in graphs if g.source_of(3).creator == 2]
    assert hit, "no execution where the reload hits the speculative fill"
    for g in graphs:
        assert check_acyclic(g)
        assert check_swmr(g)
        assert check_dv(g, meltdown_prog())
        assert check_vicl_pairing(g)


def test_squash_persistence_keeps_cache_events(ooo):
    # the squashed dependent read's fill lifetime is present even though its
    # commit stage event is not
    graphs = enumerate_executions(ooo, meltdown_prog())
    g = graphs[0]
    stages = {n.stage for n in g.nodes if type(n).__name__ == "StageNode" and n.instr == 2}
    assert "Commit" not in stages and "Execute" in stages
    assert any(v.creator == 2 for v in g.vicls())


def test_spectre_prime_probe_miss_via_invalidation(two_core):
    prog = spectre_prime_prog()
    graphs = enumerate_executions(two_core, prog)
    miss = [g for g in graphs if g.source_of(1).creator == 1]
    assert len(miss) >= 1
    for g in miss:
        prime_pair = g.source_of(0)
        assert g.cause_of(prime_pair) == (CAUSE_INVALIDATED, 4)
        assert any(isinstance(n, InvSendNode) for n in g.nodes)
        assert any(isinstance(n, InvRecvNode) for n in g.nodes)
    for g in graphs:
        assert check_swmr(g) and check_dv(g, prog)


def test_meltdown_prime_probe_miss(two_core):
    graphs = enumerate_executions(two_core, meltdown_prime_prog())
    assert any(g.source_of(1).creator == 1 for g in graphs)


def test_no_invalidation_when_speculative_requests_invisible(two_core):
    quiet = dataclasses.replace(
        two_core,
        coherence=dataclasses.replace(
            two_core.coherence, speculative_write_requests_visible=False))
    graphs = enumerate_executions(quiet, spectre_prime_prog())
    for g in graphs:
        assert not any(isinstance(n, InvSendNode) for n in g.nodes)
        # without an invalidation nothing can end the primed lifetime early
        assert g.source_of(1).creator != 1 or g.source_of(0).creator != 0


def test_speculative_flush_gated_by_flag(two_core):
    prog = LitmusProgram(
        (
            Thread("attacker", 0, (
                Instruction(0, "Read", "v0"),
                Instruction(1, "Read", "v0"),
            )),
            Thread("attacker", 1, (
                Instruction(2, "Branch"),
                Instruction(3, "Flush", "v0", speculative_under=2, squashed=True),
            )),
        ),
        AMAP2)
    ok, diags = __import__("uhbsynth.litmus", fromlist=["well_formed"]).well_formed(prog, two_core)
    assert not ok  # flag off: speculative flush is not realizable
    flagged = dataclasses.replace(
        two_core, speculation=SpeculationPolicy(True, True, True))
    graphs = enumerate_executions(flagged, prog)
    flushed = [g for g in graphs
               if g.cause_of(g.source_of(0)) == (CAUSE_FLUSHED, 3)]
    assert flushed


def test_sourcing_legality_audit(ooo, two_core):
    # for each sourced read: create before the access, access before expire
    for spec, prog in ((ooo, meltdown_prog()), (two_core, spectre_prime_prog())):
        for g in enumerate_executions(spec, prog):
            reach = Reach(g)
            for iid, v in g.sourcing:
                cre, exp = ViclNode("create", v), ViclNode("expire", v)
                acc = next(n for n in g.nodes
                           if type(n).__name__ == "StageNode"
                           and n.instr == iid and n.stage == g.access_stage)
                if v.creator != iid:
                    assert reach.before(cre, acc)
                    assert reach.before(acc, exp)


def test_determinism(two_core):
    a = enumerate_executions(two_core, spectre_prime_prog())
    b = enumerate_executions(two_core, spectre_prime_prog())
    assert [g.dedup_key() for g in a] == [g.dedup_key() for g in b]


def test_inconsistent_axiom_reported_not_thrown(ooo):
    ax_text = """
machine m
cores 1
stages Fetch Execute Commit
access_stage Execute
cache L1 private sets=2
flush_instruction on
write_allocate on
speculation permission_bypass=on branch_misprediction=on speculative_flush=off
axiom impossible: forall i, j | po(i, j) => edge i.Fetch -> j.Fetch : a & edge j.Fetch -> i.Fetch : b
"""
    from uhbsynth.specdsl import parse_spec

    spec = parse_spec(ax_text)
    prog = one_thread(Instruction(0, "Read", "v0"), Instruction(1, "Read", "v0"))
    notes = []
    graphs = enumerate_executions(spec, prog, notes)
    assert graphs == []  # cyclic consequences discard every execution


def test_acyclic_check_on_hand_built_graphs():
    from uhbsynth.graph import StageNode, acyclic

    a, b = StageNode(0, 0, "X"), StageNode(1, 0, "X")
    empty = UhbGraph((), (), (), (), ())
    assert check_acyclic(empty)
    two = UhbGraph((a, b), ((a, b, "e"), (b, a, "e")), (), (), ())
    assert not check_acyclic(two)


def test_swmr_fails_on_overlapping_write_lifetimes():
    from uhbsynth.graph import Vicl

    w = Vicl(0, "p0", 0, 0, "write")
    r = Vicl(1, "p0", 0, 1, "fill")
    nodes = (ViclNode("create", w), ViclNode("expire", w),
             ViclNode("create", r), ViclNode("expire", r))
    edges = ((nodes[0], nodes[1], "pair"), (nodes[2], nodes[3], "pair"))
    g = UhbGraph(nodes, edges, (), (), ())
    assert not check_swmr(g)  # unordered lifetimes overlap


def test_dv_fails_on_stale_sourced_value(ooo):
    # doctor a real graph: claim a fill carries value 1 while no store wrote it
    prog = one_thread(Instruction(0, "Read", "v0"))
    g = enumerate_executions(ooo, prog)[0]
    bad = dataclasses.replace(
        g, vicl_values=tuple((v, 1) for v, _ in g.vicl_values))
    assert not check_dv(bad, prog)


def test_exhaustive_coherence_audit_small(two_core):
    """Every accepted execution of every <=3-instruction two-core candidate
    passes the coherence invariants."""
    from uhbsynth.candidates import SynthesisBounds, enumerate_candidates

    n_graphs = 0
    for prog in enumerate_candidates(two_core, SynthesisBounds(3, 2, 2, 2)):
        for g in enumerate_executions(two_core, prog):
            n_graphs += 1
            assert check_acyclic(g)
            assert check_vicl_pairing(g)
            assert check_swmr(g)
            assert check_dv(g, prog)
    assert n_graphs > 1000

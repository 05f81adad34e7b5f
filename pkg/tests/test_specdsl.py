"""Machine description language: parsing, validation, round-trip printing."""

import pytest

from uhbsynth.diagnostics import InputError
from uhbsynth.machine import validate_spec
from uhbsynth.specdsl import BUILTIN_SPECS, builtin_spec, parse_spec, render_spec

MINIMAL = """
machine tiny
cores 1
stages S0
"""


def test_minimal_spec_parses():
    spec = parse_spec(MINIMAL)
    assert spec.cores == 1
    assert spec.stages == ("S0",)
    assert spec.axioms == ()
    assert spec.access_stage == "S0"
    assert not validate_spec(spec)


def test_undeclared_stage_in_axiom_is_diagnosed_with_location():
    text = MINIMAL + "axiom bad: forall i => edge i.S0 -> i.Retire2 : x\n"
    with pytest.raises(InputError) as exc:
        parse_spec(text)
    diags = exc.value.diagnostics
    assert any(d.code == "E_UNDECLARED_STAGE" and "Retire2" in d.message for d in diags)
    assert all(d.line > 0 for d in diags)


def test_duplicate_axiom_name_rejected():
    text = MINIMAL + (
        "axiom a: forall i => edge i.S0 -> i.Resolve : x\n"
        "axiom a: forall i => edge i.S0 -> i.Resolve : y\n")
    with pytest.raises(InputError) as exc:
        parse_spec(text)
    assert "E_AXIOM_DUP" in exc.value.codes


def test_unknown_predicate_rejected():
    text = MINIMAL + "axiom a: forall i | sideways(i) => edge i.S0 -> i.Resolve : x\n"
    with pytest.raises(InputError) as exc:
        parse_spec(text)
    assert "E_UNKNOWN_PREDICATE" in exc.value.codes


def test_syntax_error_carries_line_number():
    with pytest.raises(InputError) as exc:
        parse_spec("machine m\ncores one\nstages S\n")
    d = exc.value.diagnostics[0]
    assert d.code == "E_SYNTAX" and d.line == 2


def test_missing_declarations_reported():
    with pytest.raises(InputError) as exc:
        parse_spec("machine m\n")
    assert "E_MISSING_DECL" in exc.value.codes


def test_speculative_write_visibility_requires_invalidation():
    text = """
machine m
cores 2
stages F E C
coherence none
"""
    spec = parse_spec(text)
    import dataclasses

    from uhbsynth.machine import CoherencePolicy
    bad = dataclasses.replace(
        spec, coherence=CoherencePolicy("none", speculative_write_requests_visible=True))
    assert any(d.code == "E_COHERENCE" for d in validate_spec(bad))


@pytest.mark.parametrize("which", BUILTIN_SPECS)
def test_builtin_round_trip(which):
    spec = builtin_spec(which)
    text = render_spec(spec)
    assert parse_spec(text) == spec


def test_render_is_canonical_in_axiom_order():
    base = MINIMAL + (
        "axiom b: forall i => edge i.S0 -> i.Resolve : b\n"
        "axiom a: forall i => edge i.S0 -> i.Resolve : a\n")
    other = MINIMAL + (
        "axiom a: forall i => edge i.S0 -> i.Resolve : a\n"
        "axiom b: forall i => edge i.S0 -> i.Resolve : b\n")
    assert render_spec(parse_spec(base)) == render_spec(parse_spec(other))


def test_single_cores_declaration_in_render():
    spec = builtin_spec("two_core_invalidation")
    text = render_spec(spec)
    assert sum(1 for line in text.splitlines() if line.startswith("cores ")) == 1
    assert "cores 2" in text


def test_builtin_machines_have_expected_shape():
    ooo = builtin_spec("ooo_single_core")
    assert ooo.cores == 1
    assert ooo.stages == ("Fetch", "Execute", "Commit")
    assert ooo.write_allocate and ooo.has_flush_instruction
    assert ooo.speculation.allows_speculative_loads_past_permission_check
    assert ooo.speculation.allows_branch_misprediction
    assert not ooo.speculation.allows_speculative_flush
    assert ooo.coherence.kind == "none"

    two = builtin_spec("two_core_invalidation")
    assert two.cores == 2
    assert two.coherence.kind == "invalidation_based"
    assert two.coherence.speculative_write_requests_visible


def test_multiline_axiom_continuation():
    text = MINIMAL + (
        "axiom a: forall i, j | po(i, j)\n"
        "    => edge i.S0 -> j.S0 : a\n")
    spec = parse_spec(text)
    assert spec.axioms[0].predicates[0].name == "po"


def test_duplicate_declaration_rejected():
    with pytest.raises(InputError) as exc:
        parse_spec(MINIMAL + "cores 2\n")
    assert "E_DUPLICATE_DECL" in exc.value.codes

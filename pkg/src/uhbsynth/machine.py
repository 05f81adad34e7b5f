"""Machine model: pipeline stages, caches, coherence, speculation, ordering axioms.

A `MicroarchSpec` is an immutable description of the modeled machine.  Axioms
quantify over one or two instructions, filter them with a fixed predicate
vocabulary, and assert happens-before edges between event templates (pipeline
stages plus the cache/coherence events an instruction can own).  Axiom bodies
are kept in disjunctive normal form so the execution engine can enumerate
disjunct choices directly.
"""

from dataclasses import dataclass, field
from uhbsynth.diagnostics import Diagnostic

# Event points an axiom may name on a bound instruction, besides stage names.
EVENT_POINTS = (
    "ViclCreate",   # the pair carrying the instruction's own access (read fill / write value)
    "ViclExpire",
    "FillCreate",   # write-allocate fill pair of a write
    "FillExpire",
    "InvSend",      # coherence invalidation request sent by a write
    "FlushEvent",   # completion event of a flush instruction
    "Resolve",      # branch resolution / permission check of a speculation guard
)

UNARY_PREDICATES = (
    "is_read", "is_write", "is_flush", "is_fence", "is_branch", "is_memory",
    "is_guard", "committed", "squashed", "legal", "illegal",
)

BINARY_PREDICATES = (
    "po", "same_core", "diff_core", "same_vaddr", "diff_vaddr",
    "same_paddr", "diff_paddr", "same_set", "data_dep", "guards",
)


@dataclass(frozen=True)
class CacheLevelDecl:
    level_id: str
    private_to_core: bool = True
    num_sets: int = 1
    inclusive: bool = True


@dataclass(frozen=True)
class CoherencePolicy:
    kind: str = "none"  # "none" | "invalidation_based"
    speculative_write_requests_visible: bool = False


@dataclass(frozen=True)
class SpeculationPolicy:
    allows_speculative_loads_past_permission_check: bool = False
    allows_branch_misprediction: bool = False
    allows_speculative_flush: bool = False


@dataclass(frozen=True)
class NodeTemplate:
    """`var.point` in an axiom body: an event of a quantified instruction."""

    var: str
    point: str


@dataclass(frozen=True)
class EdgeAssertion:
    src: NodeTemplate
    dst: NodeTemplate
    label: str


@dataclass(frozen=True)
class Predicate:
    name: str
    args: tuple  # variable names, length 1 or 2


@dataclass(frozen=True)
class Axiom:
    """forall <vars> | <predicates> => <DNF over edge assertions>."""

    name: str
    variables: tuple          # ("i",) or ("i", "j")
    predicates: tuple         # of Predicate
    body: tuple               # disjuncts; each disjunct a tuple of EdgeAssertion


@dataclass(frozen=True)
class MicroarchSpec:
    name: str
    cores: int
    stages: tuple                      # pipeline stage names, shared by every core
    cache_levels: tuple = ()           # of CacheLevelDecl
    coherence: CoherencePolicy = CoherencePolicy()
    write_allocate: bool = False
    has_flush_instruction: bool = False
    speculation: SpeculationPolicy = SpeculationPolicy()
    axioms: tuple = ()
    access_stage: str = ""             # stage where memory is accessed

    @property
    def commit_stage(self) -> str:
        return self.stages[-1]

    @property
    def l1(self) -> CacheLevelDecl:
        """The cache level the graph engine models (deeper levels are ignored)."""
        return self.cache_levels[0] if self.cache_levels else CacheLevelDecl("L1")

    @property
    def num_sets(self) -> int:
        return self.l1.num_sets


def default_access_stage(stages) -> str:
    """Memory access happens one stage before the final (commit) stage."""
    return stages[-2] if len(stages) > 1 else stages[0]


def validate_spec(spec: MicroarchSpec) -> list:
    """Return all validation diagnostics for a machine description."""
    out = []
    if spec.cores < 1:
        out.append(Diagnostic("E_CORES", f"cores must be >= 1, got {spec.cores}"))
    if not spec.stages:
        out.append(Diagnostic("E_STAGES_EMPTY", "stage list is empty"))
    if len(set(spec.stages)) != len(spec.stages):
        out.append(Diagnostic("E_STAGES_DUP", "duplicate stage name"))
    if spec.access_stage and spec.access_stage not in spec.stages:
        out.append(Diagnostic("E_UNDECLARED_STAGE",
                              f"access stage '{spec.access_stage}' is not declared"))
    for lvl in spec.cache_levels:
        if lvl.num_sets < 1:
            out.append(Diagnostic("E_SETS", f"cache {lvl.level_id}: num_sets must be >= 1"))
    if (spec.coherence.speculative_write_requests_visible
            and spec.coherence.kind != "invalidation_based"):
        out.append(Diagnostic(
            "E_COHERENCE",
            "speculative_write_requests_visible requires invalidation_based coherence"))

    seen = set()
    for ax in spec.axioms:
        if ax.name in seen:
            out.append(Diagnostic("E_AXIOM_DUP", f"duplicate axiom name '{ax.name}'"))
        seen.add(ax.name)
        out.extend(_validate_axiom(spec, ax))
    return out


def _validate_axiom(spec: MicroarchSpec, ax: Axiom) -> list:
    out = []
    unary = set(UNARY_PREDICATES)
    binary = set(BINARY_PREDICATES)
    declared_vars = set(ax.variables)
    for p in ax.predicates:
        if p.name not in unary and p.name not in binary:
            out.append(Diagnostic("E_UNKNOWN_PREDICATE",
                                  f"axiom '{ax.name}': unknown predicate '{p.name}'"))
            continue
        want = 1 if p.name in unary else 2
        if len(p.args) != want:
            out.append(Diagnostic("E_PREDICATE_ARITY",
                                  f"axiom '{ax.name}': '{p.name}' takes {want} argument(s)"))
        for a in p.args:
            if a not in declared_vars:
                out.append(Diagnostic("E_UNBOUND_VAR",
                                      f"axiom '{ax.name}': unbound variable '{a}'"))
    points = set(spec.stages) | set(EVENT_POINTS)
    for disjunct in ax.body:
        for assertion in disjunct:
            for tpl in (assertion.src, assertion.dst):
                if tpl.var not in declared_vars:
                    out.append(Diagnostic("E_UNBOUND_VAR",
                                          f"axiom '{ax.name}': unbound variable '{tpl.var}'"))
                if tpl.point not in points:
                    out.append(Diagnostic(
                        "E_UNDECLARED_STAGE",
                        f"axiom '{ax.name}': '{tpl.point}' is not a declared stage or event"))
    return out

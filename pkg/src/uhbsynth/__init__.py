"""Synthesis of security litmus tests over microarchitectural happens-before graphs.

The pipeline: a machine description (`machine`, parsed by `specdsl`) and a
threat pattern (`patterns`) go into the bounded synthesizer (`synth`), which
enumerates candidate programs (`candidates`), builds their happens-before
executions (`executions`), and keeps the programs with an execution embedding
the pattern.  `sim` is an independent timing simulator used to confirm that
synthesized tests actually leak; `expander` turns a litmus test into a full
attack-program skeleton.
"""

from uhbsynth.machine import MicroarchSpec, CacheLevelDecl, CoherencePolicy, SpeculationPolicy
from uhbsynth.specdsl import parse_spec, render_spec, builtin_spec
from uhbsynth.litmus import LitmusProgram, Thread, Instruction, AddressMap, PermissionTable
from uhbsynth.graph import UhbGraph
from uhbsynth.patterns import ThreatPattern, flush_reload_pattern, prime_probe_pattern
from uhbsynth.synth import SynthesisBounds, SynthResult, synthesize
from uhbsynth.sim import SimConfig, simulate, leak_check

__all__ = [
    "MicroarchSpec",
    "CacheLevelDecl",
    "CoherencePolicy",
    "SpeculationPolicy",
    "parse_spec",
    "render_spec",
    "builtin_spec",
    "LitmusProgram",
    "Thread",
    "Instruction",
    "AddressMap",
    "PermissionTable",
    "UhbGraph",
    "ThreatPattern",
    "flush_reload_pattern",
    "prime_probe_pattern",
    "SynthesisBounds",
    "SynthResult",
    "synthesize",
    "SimConfig",
    "simulate",
    "leak_check",
]

__version__ = "0.1.0"

"""Shared fixtures: the reference machines and hand-built attack shapes."""

import pytest

from uhbsynth.litmus import AddressMap, Instruction, LitmusProgram, PermissionTable, Thread
from uhbsynth.specdsl import builtin_spec


@pytest.fixture(scope="session")
def ooo():
    return builtin_spec("ooo_single_core")


@pytest.fixture(scope="session")
def two_core():
    return builtin_spec("two_core_invalidation")


AMAP2 = AddressMap.of({"v0": ("p0", 0), "v1": ("p1", 1)})
NO_READ_P1 = PermissionTable.of({("attacker", "p1"): (False, True)})


def meltdown_prog(roles=True):
    """Flush a; illegal read k (self-squashed); dependent read a; reload a."""
    return LitmusProgram(
        (Thread("attacker", 0, (
            Instruction(0, "Flush", "v0"),
            Instruction(1, "Read", "v1", speculative_under=1, squashed=True),
            Instruction(2, "Read", "v0", dep_on=1, speculative_under=1, squashed=True),
            Instruction(3, "Read", "v0"),
        )),),
        AMAP2,
        NO_READ_P1,
        roles=(("evict", 0), ("filler", 2), ("reload", 3)) if roles else (),
        secret_paddr="p1" if roles else None,
    )


def spectre_prog(roles=True):
    """Flush a; mispredicted branch; secret load; dependent read a; reload a."""
    return LitmusProgram(
        (Thread("attacker", 0, (
            Instruction(0, "Flush", "v0"),
            Instruction(1, "Branch"),
            Instruction(2, "Read", "v1", speculative_under=1, squashed=True),
            Instruction(3, "Read", "v0", dep_on=2, speculative_under=1, squashed=True),
            Instruction(4, "Read", "v0"),
        )),),
        AMAP2,
        roles=(("evict", 0), ("filler", 3), ("reload", 4)) if roles else (),
        secret_paddr="p1" if roles else None,
    )


def meltdown_prime_prog(roles=True):
    """Core 0 primes and probes; core 1 speculatively writes past a permission check."""
    return LitmusProgram(
        (
            Thread("attacker", 0, (
                Instruction(0, "Read", "v0"),
                Instruction(1, "Read", "v0"),
            )),
            Thread("attacker", 1, (
                Instruction(2, "Read", "v1", speculative_under=2, squashed=True),
                Instruction(3, "Write", "v0", written_value=1, dep_on=2,
                            speculative_under=2, squashed=True),
            )),
        ),
        AMAP2,
        NO_READ_P1,
        roles=(("evictor", 3), ("prime", 0), ("probe", 1)) if roles else (),
        secret_paddr="p1" if roles else None,
    )


def spectre_prime_prog(roles=True):
    """Core 0 primes and probes; core 1 speculatively writes under a mispredicted branch."""
    return LitmusProgram(
        (
            Thread("attacker", 0, (
                Instruction(0, "Read", "v0"),
                Instruction(1, "Read", "v0"),
            )),
            Thread("attacker", 1, (
                Instruction(2, "Branch"),
                Instruction(3, "Read", "v1", speculative_under=2, squashed=True),
                Instruction(4, "Write", "v0", written_value=1, dep_on=3,
                            speculative_under=2, squashed=True),
            )),
        ),
        AMAP2,
        roles=(("evictor", 4), ("prime", 0), ("probe", 1)) if roles else (),
        secret_paddr="p1" if roles else None,
    )


def single_read_prog():
    return LitmusProgram(
        (Thread("attacker", 0, (Instruction(0, "Read", "v0"),)),),
        AddressMap.of({"v0": ("p0", 0)}),
    )

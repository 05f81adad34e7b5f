"""Attack skeleton expansion: structure, geometry, golden file."""

from pathlib import Path

import pytest

from uhbsynth.expander import (
    PHASES,
    CacheGeometry,
    ExpansionError,
    expand,
    probe_permutation,
    render_skeleton,
)
from conftest import meltdown_prog, spectre_prime_prog, spectre_prog

GEOM = CacheGeometry(line_size=64, num_sets=64, associativity=8, inclusive=True)
GOLDEN = Path(__file__).parent / "golden" / "spectre_prime.attack.txt"


def test_geometry_validation():
    with pytest.raises(ValueError):
        CacheGeometry(line_size=48, num_sets=64).validate()
    with pytest.raises(ValueError):
        CacheGeometry(line_size=64, num_sets=0).validate()


def test_stride_must_cover_line():
    with pytest.raises(ExpansionError):
        expand(spectre_prime_prog(), "spectre_prime_shape", GEOM, stride=32)


def test_unannotated_test_rejected():
    with pytest.raises(ExpansionError):
        expand(spectre_prime_prog(roles=False), "spectre_prime_shape", GEOM)


def test_spectre_prime_expansion_structure():
    sk = expand(spectre_prime_prog(), "spectre_prime_shape", GEOM)
    text = render_skeleton(sk)
    for phase in PHASES:
        assert f"== {phase} ==" in text
    assert sk.two_threads
    assert "256 slots x 512 bytes stride" in text
    assert "wait until flag == 1" in text
    assert "for j in 29..0:" in text            # 30 training iterations
    assert "x = training_x ^ (x & (malicious_x ^ training_x))" in text
    assert "((i * 167) + 13) & 255" in text
    # every litmus instruction is mapped to exactly one phase
    ids = sorted(i.id for i in spectre_prime_prog().instructions())
    assert sorted(i for i, _ in sk.phase_of) == ids
    for phase in PHASES:
        assert dict(sk.phase_lines)[phase]      # no phase is empty


def test_spectre_expansion_single_thread():
    sk = expand(spectre_prog(), "spectre_shape", GEOM)
    text = render_skeleton(sk)
    assert not sk.two_threads
    assert "flush probe_array" in text          # flush-based setup
    assert "wait until flag" not in text
    assert "if dt < threshold" in text          # reload classifies hits


def test_meltdown_expansion():
    sk = expand(meltdown_prog(), "meltdown_shape", GEOM)
    text = render_skeleton(sk)
    assert "speculative load v1" in text
    assert dict(sk.phase_lines)["TRAIN"]


def test_degenerate_geometry_still_valid():
    geom = CacheGeometry(line_size=64, num_sets=1)
    sk = expand(spectre_prime_prog(), "spectre_prime_shape", geom)
    assert "for slot in 0..255" in render_skeleton(sk)


def test_probe_permutation_is_bijection():
    perm = probe_permutation()
    assert sorted(perm) == list(range(256))
    assert perm[0] == 13 and perm[1] == 180
    # any odd multiplier permutes
    assert sorted(probe_permutation(89, 7)) == list(range(256))


def test_render_deterministic():
    a = render_skeleton(expand(spectre_prime_prog(), "spectre_prime_shape", GEOM))
    b = render_skeleton(expand(spectre_prime_prog(), "spectre_prime_shape", GEOM))
    assert a == b


def test_golden_spectre_prime_expansion():
    text = render_skeleton(expand(spectre_prime_prog(), "spectre_prime_shape", GEOM))
    assert GOLDEN.exists(), "golden file missing; regenerate with tests/golden/make_golden.py"
    assert text == GOLDEN.read_text("utf-8")

"""Regenerate the checked-in golden files from the current implementation.

Run from the repository root:  python3 tests/golden/make_golden.py
Inspect the diff before committing a regenerated golden.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from conftest import spectre_prime_prog
from uhbsynth.expander import CacheGeometry, expand, render_skeleton


def main():
    out = Path(__file__).parent / "spectre_prime.attack.txt"
    geom = CacheGeometry(line_size=64, num_sets=64, associativity=8, inclusive=True)
    text = render_skeleton(expand(spectre_prime_prog(), "spectre_prime_shape", geom))
    out.write_text(text, "utf-8")
    print(f"wrote {out} ({len(text)} bytes)")


if __name__ == "__main__":
    main()

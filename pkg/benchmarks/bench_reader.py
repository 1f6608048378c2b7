"""Compare the compiled and pure-Python s-expression readers.

    python3 benchmarks/bench_reader.py [--repeat N] [--size N]

Both readers are imported directly, so the environment switch that picks
one at import time does not matter here.
"""

import argparse
import random
import statistics
import sys
import time

from policyguard.logic import _reader_py

try:
    from policyguard.logic import _reader_c
except ImportError:
    _reader_c = None

OPS = ["and", "or", "=>", "not", "+", "*", "<=", "="]
ATOMS = ["isLowSeason", "baseFee", "creditUnit", "0.75", "50", "SENIOR", "true"]


def random_sexp(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        return rng.choice(ATOMS)
    args = " ".join(random_sexp(rng, depth - 1) for _ in range(rng.randint(1, 3)))
    return f"({rng.choice(OPS)} {args})"


def corpus(n, seed=0):
    rng = random.Random(seed)
    lines = []
    for i in range(n):
        lines.append(f'(declare-const v{i} Real)\n(describe v{i} "variable number {i}")')
        lines.append(f"(rule r{i} {random_sexp(rng, 6)})")
    return "\n".join(lines)


def timed(fn, text, repeat):
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(text)
        runs.append(time.perf_counter() - t0)
    return min(runs), statistics.median(runs)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=7)
    p.add_argument("--size", type=int, default=2000, help="declarations and rules to generate")
    args = p.parse_args(argv)

    text = corpus(args.size)
    print(f"input: {len(text):,} characters")
    best_py, med_py = timed(_reader_py.read_all, text, args.repeat)
    print(f"python  best {best_py * 1e3:8.2f} ms  median {med_py * 1e3:8.2f} ms")
    if _reader_c is None:
        print("cython  not built")
        return 0
    if _reader_c.read_all(text) != _reader_py.read_all(text):
        print("readers disagree", file=sys.stderr)
        return 1
    best_c, med_c = timed(_reader_c.read_all, text, args.repeat)
    print(f"cython  best {best_c * 1e3:8.2f} ms  median {med_c * 1e3:8.2f} ms")
    print(f"speedup {best_py / best_c:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

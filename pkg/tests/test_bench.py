import subprocess
import sys
from pathlib import Path

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_reader.py"


def test_benchmark_runs():
    out = subprocess.run([sys.executable, str(BENCH), "--size", "50", "--repeat", "2"], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "python  best" in out.stdout

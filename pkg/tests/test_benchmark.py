import subprocess
import sys
from pathlib import Path

import pytest

from xmodal import kernels

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


@pytest.mark.skipif("numba" not in kernels.IMPLEMENTATIONS, reason="numba backend disabled")
def test_benchmark_quick_run():
    out = subprocess.run([sys.executable, str(BENCH), "--quick", "--repeat", "1"],
                         capture_output=True, text=True, check=True).stdout
    assert "relevant_ranks 200x1000" in out
    assert out.count("x\n") == 5

import sys
from fractions import Fraction

import numpy as np
import pytest

from rdallreduce.costmodel import ClusterTopology, CostParams

US = Fraction(1, 10**6)


@pytest.fixture
def latency_params():
    """0.5 us intra, 2 us inter, infinite bandwidth on both tiers."""
    return CostParams(alpha_intra=US / 2, alpha_inter=2 * US)


def random_inputs(topo: ClusterTopology, count: int, seed: int, dtype=np.int32):
    rng = np.random.default_rng(seed)
    if np.dtype(dtype) == np.int32:
        return [rng.integers(-(2**31), 2**31 - 1, size=count, dtype=np.int32, endpoint=True)
                for _ in range(topo.world_size)]
    return [rng.random(count, dtype=np.float32) for _ in range(topo.world_size)]


def brute_force_sum(inputs):
    """Element-by-element Python-int sum, wrapped to int32."""
    n = len(inputs[0])
    out = []
    for i in range(n):
        s = sum(int(x[i]) for x in inputs)
        out.append((s + 2**31) % 2**32 - 2**31)
    return np.array(out, dtype=np.int32)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])

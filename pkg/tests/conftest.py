import re

import numpy as np
import pytest


def naive_conv2d(x, weight, stride=(1, 1), padding=(0, 0)):
    """Six-loop reference convolution (no FFT, no im2col) used as the
    independent oracle for every convolution equivalence test."""
    b, c_in, h, w = x.shape
    c_out, _, kh, kw = weight.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.zeros((b, c_in, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    xp[:, :, ph:ph + h, pw:pw + w] = x
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((b, c_out, oh, ow), dtype=np.float64)
    for n in range(b):
        for o in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (xp[n, c, i * sh + u, j * sw + v]
                                        * weight[o, c, u, v])
                    out[n, o, i, j] = acc
    return out


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(0)


_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    rows = {}
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in rep.nodeid:
                continue
            m = _CRITERION.search(rep.nodeid)
            if m and rep.when in ("call", "setup"):
                rows.setdefault(int(m.group(1)), (m.group(2), outcome))
    if not rows:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(rows):
        name, outcome = rows[num]
        label = {"passed": "PASS", "failed": "FAIL", "error": "FAIL",
                 "skipped": "SKIP"}[outcome]
        terminalreporter.write_line(
            f"criterion {num:2d} [{label}] {name.replace('_', ' ')}"
        )

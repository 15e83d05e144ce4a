"""Shared fixtures and independent oracles for the test suite.

Oracles here are deliberately naive (explicit loops, rational arithmetic)
so they share no code path with the implementations they check.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

# acceptance tests append "CRITERION n: PASS/FAIL (...)" lines here; the
# terminal-summary hook below echoes them after the run so they are visible
# even though pytest captures stdout
CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERION_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------------------
# matrix product, written as the definition


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, inner = a.shape
    inner2, n = b.shape
    assert inner == inner2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(inner):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


# ---------------------------------------------------------------------------
# 2-D cross-correlation, written as six explicit loops


def conv2d_oracle(x: np.ndarray, w: np.ndarray, stride: int = 1,
                  padding: str = "same", groups: int = 1) -> np.ndarray:
    """Direct convolution over (B, C_in, H, W) with (C_out, C_in/g, kh, kw).

    Same padding computes ceil(H/stride) outputs with any odd padding pixel
    on the bottom/right; valid padding uses only fully covered windows.
    """
    b, c_in, h, wdt = x.shape
    c_out, c_in_g, kh, kw = w.shape
    assert c_in % groups == 0 and c_out % groups == 0
    assert c_in_g == c_in // groups
    if padding == "same":
        out_h = math.ceil(h / stride)
        out_w = math.ceil(wdt / stride)
        pad_h = max(0, (out_h - 1) * stride + kh - h)
        pad_w = max(0, (out_w - 1) * stride + kw - wdt)
        top, left = pad_h // 2, pad_w // 2
        x = np.pad(x, ((0, 0), (0, 0), (top, pad_h - top),
                       (left, pad_w - left)))
    else:
        out_h = (h - kh) // stride + 1
        out_w = (wdt - kw) // stride + 1
    out = np.zeros((b, c_out, out_h, out_w))
    out_per_group = c_out // groups
    for bi in range(b):
        for co in range(c_out):
            g = co // out_per_group
            for oy in range(out_h):
                for ox in range(out_w):
                    acc = 0.0
                    for ci in range(c_in_g):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (x[bi, g * c_in_g + ci,
                                          oy * stride + ky,
                                          ox * stride + kx]
                                        * w[co, ci, ky, kx])
                    out[bi, co, oy, ox] = acc
    return out


# ---------------------------------------------------------------------------
# macro metrics by rational per-class counting


def metrics_oracle(counts: np.ndarray) -> dict:
    """Exact accuracy / macro precision / recall / F1 from a confusion
    matrix, all in Fractions until the final float conversion."""
    c = counts.shape[0]
    total = int(counts.sum())
    correct = sum(int(counts[i, i]) for i in range(c))
    accuracy = Fraction(correct, total)
    precisions, recalls = [], []
    for i in range(c):
        tp = int(counts[i, i])
        pred_i = sum(int(counts[r, i]) for r in range(c))
        true_i = sum(int(counts[i, r]) for r in range(c))
        precisions.append(Fraction(tp, pred_i) if pred_i else Fraction(0))
        recalls.append(Fraction(tp, true_i) if true_i else Fraction(0))
    precision = sum(precisions, Fraction(0)) / c
    recall = sum(recalls, Fraction(0)) / c
    if precision + recall == 0:
        f1 = Fraction(0)
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return {"accuracy": float(accuracy), "precision": float(precision),
            "recall": float(recall), "f1": float(f1)}

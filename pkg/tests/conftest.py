import numpy as np
import pytest

from labelcorr.annot import Polyline, buffer_rasterize


def f1(pred, gt):
    pred = np.asarray(pred, bool)
    gt = np.asarray(gt, bool)
    tot = pred.sum() + gt.sum()
    return 2.0 * (pred & gt).sum() / tot if tot else 1.0


def line_scene(size=96, pts=((14, 30), (80, 62)), width=5.0, contrast=0.6, bg=0.9,
               sigma=0.0, seed=0):
    """Gray image with one dark straight line; returns (img, truth_mask, polyline)."""
    line = Polyline(np.array(pts, dtype=float))
    truth = buffer_rasterize([line], width / 2.0, (size, size))
    img = np.where(truth, bg - contrast, bg)
    if sigma:
        img = np.clip(img + np.random.default_rng(seed).normal(0, sigma, img.shape), 0, 1)
    return img, truth, line


@pytest.fixture
def scene():
    return line_scene()


ACCEPTANCE_LINES = []


def record(tag: str, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from matchkit.core import Economy


def random_economy(rng, n, m, *, coarse=False, n_classes=2, caps=None, typed=False, partial=False):
    """Small random economy. ``partial`` lets students leave schools off
    their lists; ``coarse`` draws priority classes instead of strict orders."""
    I = [str(k + 1) for k in range(n)]
    S = [chr(ord("a") + j) for j in range(m)]
    prefs = {}
    for i in I:
        order = [S[j] for j in rng.permutation(m)]
        if partial:
            order = order[: int(rng.integers(1, m + 1))]
        prefs[i] = order
    prio = {}
    for s in S:
        if coarse:
            cls = rng.integers(0, n_classes, size=n)
            prio[s] = tuple(tuple(I[k] for k in range(n) if cls[k] == c) for c in range(n_classes) if np.any(cls == c))
        else:
            prio[s] = tuple((I[k],) for k in rng.permutation(n))
    if caps is None:
        caps = {s: 1 for s in S}
    kw = {}
    if typed:
        kw["types"] = {i: ("m" if rng.random() < 0.4 else "M") for i in I}
    return Economy(I, S, caps, prefs, prio, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

"""Acceptance criteria, one test (and one PASS/FAIL line) per criterion.

The lines are collected in ``RESULTS`` and printed in the terminal summary by
``conftest.py``. Extended-order parts carry the ``extended`` marker and run
with ``pytest -m extended``.
"""
import time
from functools import cache

import numpy as np
import pytest

import ftgstab.lmi as lmi_mod
import ftgstab.synthesis as syn_mod
from ftgstab.controllers import PwlController, cut
from ftgstab.graphs import build_debruijn, build_ftg, is_complete, is_deterministic, successor
from ftgstab.lmi import SynthesisMode, verify_certificate
from ftgstab.model import SwitchingSignal, load_fixture
from ftgstab.sim import simulate
from ftgstab.synthesis import bisect_rate, embed_solution, feasible_at_rate

from oracles import finite_step_ratio, memory_automaton_runs, one_step_decrease, random_schur_instance, schur_signs

RESULTS = []

TABLE1 = {1: 1.3289, 3: 1.3047, 5: 1.2943, 8: 1.2735, 11: 1.2713}
TABLE2 = {1: 1.32472, 3: 1.25843, 5: 1.24952, 6: 1.24934}


def record(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


_BOUNDS = {}


def _bound(kind, T):
    """Bisection on Example 2 from the default bracket, cached for the session."""
    if (kind, T) not in _BOUNDS:
        t0 = time.perf_counter()
        rb = bisect_rate(load_fixture("ex2"), kind, T, SynthesisMode.DEP, tol=1e-3)
        _BOUNDS[kind, T] = rb, time.perf_counter() - t0
    return _BOUNDS[kind, T]


@cache
def _ex1_probe():
    t0 = time.perf_counter()
    res = feasible_at_rate(load_fixture("ex1"), build_ftg(2, 5), SynthesisMode.IND, 0.9606)
    return res, time.perf_counter() - t0


@cache
def _scalar_dep():
    return feasible_at_rate(load_fixture("scalar"), build_ftg(2, 0), SynthesisMode.DEP, 0.5)


def _table(kind, ref, orders, tol_abs, per_run=None):
    rows, ok = [], True
    for T in orders:
        rb, secs = _bound(kind, T)
        good = abs(rb.gamma_upper - ref[T]) <= tol_abs and (per_run is None or secs <= per_run)
        ok &= good
        rows.append(f"T={T}: {rb.gamma_upper:.5f} vs {ref[T]} ({secs:.1f}s)")
    return ok, "; ".join(rows)


def test_criterion_1_table1():
    ok, detail = _table("ftg", TABLE1, (1, 3, 5), 0.003, per_run=60)
    assert record("1", ok, "FTG table, orders 1,3,5 within 0.003, <= 60 s each: " + detail)


@pytest.mark.extended
def test_criterion_1_table1_extended():
    t0 = time.perf_counter()
    ok, detail = _table("ftg", TABLE1, (8, 11), 0.005)
    total = time.perf_counter() - t0
    ok &= total <= 20 * 60
    assert record("1x", ok, f"FTG table, orders 8,11 within 0.005, {total:.0f}s total (<= 1200 s): " + detail)


def test_criterion_2_table2():
    ok, detail = _table("debruijn", TABLE2, (1, 3), 0.002)
    assert record("2", ok, "De Bruijn table, orders 1,3 within 0.002: " + detail)


@pytest.mark.extended
def test_criterion_2_table2_extended():
    ok, detail = _table("debruijn", TABLE2, (5, 6), 0.002)
    assert record("2x", ok, "De Bruijn table, orders 5,6 within 0.002: " + detail)


def test_criterion_3_example1():
    res, secs = _ex1_probe()
    ok = res.feasible
    if ok:
        rep = verify_certificate(load_fixture("ex1"), res.certificate, 0.9606)
        ok = len(res.certificate.P) == 63 and rep.passed and rep.margin > 0 and secs <= 60
        detail = f"{len(res.certificate.P)} P matrices, margin {rep.margin:.3g}, {secs:.1f}s"
    else:
        detail = f"status {res.status}: {res.message}"
    assert record("3", ok, "Example 1 FTG(5) mode-independent at 0.9606: " + detail)


def test_criterion_4_scalar():
    system = load_fixture("scalar")
    res = _scalar_dep()
    dead = []
    if res.feasible:
        ctrl = PwlController(res.certificate)
        for x0 in (5.0, -2.0, 1e-3):
            for i in (1, 2):
                x1 = simulate(system, ctrl, (i,), [x0]).states[1, 0]
                dead.append(abs(x1) <= 1e-12 * abs(x0))
    ind = [
        feasible_at_rate(system, build_ftg(2, T), SynthesisMode.IND, 0.99).status for T in range(4)
    ]
    ok = res.feasible and all(dead) and all(s == "infeasible" for s in ind)
    assert record("4", ok, f"scalar: dependent feasible at 0.5 with one-step deadbeat {all(dead)}; independent T=0..3 at 0.99: {ind}")


def test_criterion_5_graph_properties():
    failures = []
    for M in (1, 2, 3):
        for T in range(5):
            G = build_ftg(M, T)
            nodes = sum(M**k for k in range(T + 1))
            if len(G.nodes) != nodes or len(G.edges) != M * nodes or not (is_complete(G) and is_deterministic(G)):
                failures.append(("ftg", M, T))
            if T >= 1:
                D = build_debruijn(M, T)
                if len(D.nodes) != M**T or len(D.edges) != M ** (T + 1) or not (is_complete(D) and is_deterministic(D)):
                    failures.append(("debruijn", M, T))
    rng = np.random.default_rng(5)
    walks = 0
    for _ in range(200):
        M, T = int(rng.integers(1, 4)), int(rng.integers(0, 5))
        G = build_ftg(M, T)
        sig = SwitchingSignal.random(M, 40, rng).values
        state = ()
        for k in range(40):
            if state != cut(T + 1, sig, k):
                failures.append(("walk", M, T))
                break
            state = successor(G, state, sig[k])
        walks += 1
    ok = not failures
    assert record("5", ok, f"counts/complete/deterministic for M<=3, T<=4 and {walks} walk-equals-cut signals; failures {failures[:5]}")


def _produced_certificates():
    """Certificates from criteria 1-4; extended orders only if they were computed in this session."""
    ex2 = load_fixture("ex2")
    certs = [(f"table1 T={T}", ex2, _bound("ftg", T)[0].certificate) for T in (1, 3, 5)]
    certs += [(f"table2 l={T}", ex2, _bound("debruijn", T)[0].certificate) for T in (1, 3)]
    for kind, orders in (("ftg", (8, 11)), ("debruijn", (5, 6))):
        certs += [(f"{kind} T={T}", ex2, _BOUNDS[kind, T][0].certificate) for T in orders if (kind, T) in _BOUNDS]
    certs.append(("example1", load_fixture("ex1"), _ex1_probe()[0].certificate))
    certs.append(("scalar", load_fixture("scalar"), _scalar_dep().certificate))
    return certs


def test_criterion_6_certificate_properties():
    rng = np.random.default_rng(6)
    lines, ok = [], True
    for name, system, cert in _produced_certificates():
        rep = verify_certificate(system, cert, cert.gamma)
        a = rep.passed and rep.margin > 0
        b = one_step_decrease(system, cert, rng, samples=1000) <= 1 + 1e-8
        c = d = True
        if cert.graph.is_ftg:
            runs = memory_automaton_runs(system, cert, rng, runs=100, length=50)
            c = all(np.array_equal(m.states, au.states) and np.array_equal(m.inputs, au.inputs) for _, m, au in runs)
            d = all(finite_step_ratio(cert, m) < 1 for _, m, _ in runs)
        ok &= a and b and c and d
        lines.append(f"{name}:{'ok' if a and b and c and d else f'a={a} b={b} c={c} d={d}'}")
    assert record("6", ok, "edge check, one-step decrease, memory=automaton, finite-step decrease: " + ", ".join(lines))


def test_criterion_7_embedding(monkeypatch):
    def no_solve(*args, **kwargs):
        raise AssertionError("embedding must not call the solver")

    scalar_cert = _scalar_dep().certificate
    ex2_res = feasible_at_rate(load_fixture("ex2"), build_ftg(2, 1), SynthesisMode.DEP, 1.34)
    monkeypatch.setattr(lmi_mod, "solve_feasibility", no_solve)
    monkeypatch.setattr(syn_mod, "solve_feasibility", no_solve)
    rows, ok = [], True
    for name, system, cert in (("scalar N=0", load_fixture("scalar"), scalar_cert), ("ex2 N=1", load_fixture("ex2"), ex2_res.certificate)):
        t0 = time.perf_counter()
        big = embed_solution(cert)
        rep = verify_certificate(system, big, cert.gamma)
        secs = time.perf_counter() - t0
        good = rep.passed and big.graph.order == 2 * cert.graph.order + 1 and secs <= 1.0
        ok &= good
        rows.append(f"{name} -> order {big.graph.order}, margin {rep.margin:.3g}, {secs * 1e3:.1f} ms")
    assert record("7", ok, "embedding verified without a solve: " + "; ".join(rows))


def test_criterion_8_schur_fuzz():
    rng = np.random.default_rng(8)
    agree = disagree = near = 0
    for _ in range(500):
        blk, res = schur_signs(*random_schur_instance(rng))
        if abs(blk) <= 1e-9 or abs(res) <= 1e-9:
            near += 1
        elif (blk > 0) == (res < 0):
            agree += 1
        else:
            disagree += 1
    ok = disagree == 0
    assert record("8", ok, f"500 instances: {agree} agree, {disagree} disagree, {near} within 1e-9 of the boundary")

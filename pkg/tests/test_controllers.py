import numpy as np
import pytest

from ftgstab.controllers import (
    AutomatonController,
    ControllerError,
    MemoryController,
    PwlController,
    cut,
    load_controller,
    make_controller,
    rem,
    save_controller_descriptor,
)
from ftgstab.graphs import build_debruijn, build_ftg
from ftgstab.lmi import Certificate, SynthesisMode, save_certificate
from ftgstab.model import SwitchingSignal
from ftgstab.sim import simulate

from oracles import finite_step_ratio, memory_automaton_runs, one_step_decrease

SIG = (1, 2, 2, 1, 2, 1)


def _dummy(T=2, mode=SynthesisMode.IND, n=2):
    G = build_ftg(2, T)
    P = {s: np.eye(n) * (1 + j) for j, s in enumerate(G.nodes)}
    if mode is SynthesisMode.DEP:
        K = {(s, i): np.full((1, n), 10.0 * j + i) for j, s in enumerate(G.nodes) for i in (1, 2)}
    else:
        K = {s: np.full((1, n), float(j)) for j, s in enumerate(G.nodes)}
    return Certificate(G, mode, 1.0, P, K)


def test_rem_and_cut():
    assert [rem(3, k) for k in range(7)] == [0, 1, 2, 0, 1, 2, 0]
    assert cut(3, SIG, 0) == ()
    assert cut(3, SIG, 2) == (1, 2)
    assert cut(3, SIG, 3) == ()
    assert cut(3, SIG, 5) == (1, 2)
    assert cut(3, SIG, 6) == ()
    assert cut(1, SIG, 4) == ()
    with pytest.raises(ValueError):
        rem(0, 1)
    with pytest.raises(ValueError):
        cut(3, SIG, 7)


def test_memory_examples():
    ctrl = MemoryController(_dummy(2))
    assert ctrl.node(5, SIG) == (1, 2)
    assert ctrl.node(6, SIG) == ()
    assert ctrl.node(4, SIG) == (1,)


def test_automaton_walk():
    ctrl = AutomatonController(_dummy(2))
    visited = [ctrl.state] + [ctrl.step(i) for i in SIG]
    assert visited == [(), (1,), (1, 2), (), (1,), (1, 2), ()]


def test_automaton_walk_matches_memory_nodes(rng):
    cert = _dummy(3)
    mem = MemoryController(cert)
    for _ in range(50):
        sig = SwitchingSignal.random(2, 30, rng).values
        a = AutomatonController(cert)
        for k in range(30):
            assert a.state == mem.node(k, sig)
            a.step(sig[k])


def test_automaton_apply_then_step():
    cert = _dummy(2, SynthesisMode.DEP)
    a = AutomatonController(cert)
    u = a.control(np.ones(2), 2)
    np.testing.assert_allclose(u, [2.0 * 2])  # node 0, label 2
    assert a.state == (2,)
    b = a.clone()
    b.step(1)
    assert a.state == (2,) and b.state == (2, 1)


def test_automaton_rejects_bad_start():
    with pytest.raises(ControllerError):
        AutomatonController(_dummy(1), state=(1, 1))


def test_pwl_selection_and_ties():
    G = build_ftg(2, 0)
    cert = Certificate(G, SynthesisMode.IND, 1.0, {(): np.eye(2)}, {(): np.array([[1.0, 2.0]])})
    ctrl = PwlController(cert)
    assert ctrl.select([1.0, 0.0]) == ()
    np.testing.assert_allclose(ctrl.control([1.0, 1.0]), [3.0])

    G = build_ftg(2, 1)
    P = {(): np.diag([1.0, 4.0]), (1,): np.diag([4.0, 1.0]), (2,): np.diag([4.0, 1.0])}
    K = {s: np.full((1, 2), float(j)) for j, s in enumerate(G.nodes)}
    ctrl = PwlController(Certificate(G, SynthesisMode.IND, 1.0, P, K))
    assert ctrl.select([1.0, 0.0]) == ()
    assert ctrl.select([0.0, 1.0]) == (1,)  # tie between (1,) and (2,) goes to the first
    assert ctrl.select([1.0, 1.0]) == ()  # three-way tie


def test_pwl_homogeneity(ex2_cert, rng):
    ctrl = PwlController(ex2_cert)
    for _ in range(100):
        x = rng.standard_normal(2)
        lam = rng.uniform(-10, 10)
        assert ctrl.select(lam * x) == ctrl.select(x)
        np.testing.assert_allclose(ctrl.control(lam * x, 1), lam * ctrl.control(x, 1), rtol=1e-12, atol=1e-12)


def test_mode_argument_rules(ex2_cert, ex1_cert):
    with pytest.raises(ControllerError):
        PwlController(ex2_cert).control(np.ones(2))
    with pytest.raises(ControllerError):
        PwlController(ex1_cert).control(np.ones(2), 1)
    with pytest.raises(ValueError):
        MemoryController(ex2_cert).gain(3, (1, 2, 1))


def test_memory_rejects_debruijn(ex2):
    G = build_debruijn(2, 1)
    cert = Certificate(G, SynthesisMode.IND, 1.0, {s: np.eye(2) for s in G.nodes}, {s: np.zeros((1, 2)) for s in G.nodes})
    with pytest.raises(ControllerError):
        MemoryController(cert)
    assert AutomatonController(cert).state == (1,)


def test_memory_edit_invariance(ex1_cert, ex1, rng):
    """Changing modes older than the current block leaves the input unchanged."""
    ctrl = MemoryController(ex1_cert)
    h = ex1_cert.graph.order + 1
    for _ in range(100):
        sig = list(SwitchingSignal.random(2, 40, rng).values)
        k = int(rng.integers(h, 40))
        start = k - rem(h, k)
        edited = list(sig)
        for j in range(start):
            edited[j] = 3 - edited[j]
        np.testing.assert_array_equal(ctrl.gain(k, sig[:k]), ctrl.gain(k, edited[:k]))


@pytest.mark.parametrize("which", ["ex1", "ex2"])
def test_one_step_decrease(which, request, rng):
    system, cert = request.getfixturevalue(which), request.getfixturevalue(which + "_cert")
    assert one_step_decrease(system, cert, rng, samples=300) <= 1 + 1e-8


@pytest.mark.parametrize("which", ["ex1", "ex2"])
def test_memory_matches_automaton(which, request, rng):
    system, cert = request.getfixturevalue(which), request.getfixturevalue(which + "_cert")
    for sig, a, b in memory_automaton_runs(system, cert, rng, runs=20):
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        assert finite_step_ratio(cert, a) < 1


def test_make_and_load(tmp_path, ex2_cert):
    save_certificate(ex2_cert, tmp_path / "cert.json")
    save_controller_descriptor("automaton", "cert.json", tmp_path / "ctrl.json")
    ctrl = load_controller(tmp_path / "ctrl.json")
    assert isinstance(ctrl, AutomatonController)
    np.testing.assert_array_equal(ctrl.certificate.P[()], ex2_cert.P[()])
    with pytest.raises(ControllerError, match="unknown"):
        make_controller("fuzzy", ex2_cert)


def test_controllers_drive_the_plant(ex2, ex2_cert, rng):
    sig = SwitchingSignal.random(2, 60, rng)
    for ctrl in (PwlController(ex2_cert), MemoryController(ex2_cert), AutomatonController(ex2_cert)):
        traj = simulate(ex2, ctrl, sig, [1.0, -1.0])
        assert np.linalg.norm(traj.states[-1]) < 1.35**60 * 100
        assert np.all(np.isfinite(traj.states))

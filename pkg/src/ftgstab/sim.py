"""Closed-loop rollouts, Lyapunov traces, adversarial switching and level sets."""
from __future__ import annotations

import csv
import io
import itertools
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .controllers import AutomatonController, MemoryController, PwlController, quadratic_values
from .graphs import is_complete, is_deterministic, node_key, successor
from .lmi import Certificate, SynthesisMode
from .model import PerturbationModel, SwitchedSystem, SwitchingSignal

EXHAUSTIVE_MAX_STEPS = 12


class DegenerateTrajectoryWarning(UserWarning):
    pass


def lyapunov_pwl(cert: Certificate, x) -> float:
    """``W(x) = min_s sqrt(x^T P_s x)``."""
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(max(quadratic_values(cert.P_stack(), x).min(), 0.0)))


def lyapunov_node(cert: Certificate, node, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(max(x @ cert.P[node] @ x, 0.0)))


class _Policy:
    """Uniform ``act(k, sigma, x)`` over the three controller kinds.

    ``sigma`` holds the modes known at time ``k``, including ``sigma[k]``; each
    controller only reads the part it is entitled to.
    """

    def __init__(self, controller):
        self.controller = controller
        if isinstance(controller, AutomatonController):
            self.controller = controller.clone()
        self.dep = controller.certificate.mode is SynthesisMode.DEP

    def act(self, k, sigma, x):
        c = self.controller
        if isinstance(c, PwlController):
            return c.control(x, int(sigma[k]) if self.dep else None)
        if isinstance(c, MemoryController):
            return c.control(k, sigma[: k + 1] if self.dep else sigma[:k], x)
        return c.control(x, int(sigma[k]))

    def fork(self):
        twin = _Policy.__new__(_Policy)
        twin.dep = self.dep
        c = self.controller
        twin.controller = c.clone() if isinstance(c, AutomatonController) else c
        return twin


@dataclass
class Trajectory:
    states: np.ndarray
    inputs: np.ndarray
    signal: SwitchingSignal
    lyap_pwl: np.ndarray
    lyap_auto: np.ndarray
    perturbations: np.ndarray = field(repr=False, default=None)
    nodes: list = field(default_factory=list, repr=False)

    @property
    def N(self):
        return len(self.signal)

    def to_rows(self):
        n = self.states.shape[1]
        m = self.inputs.shape[1] if self.inputs.ndim == 2 else 0
        header = ["k", *(f"x{j + 1}" for j in range(n)), *(f"u{j + 1}" for j in range(m)), "sigma", "W", "V_auto"]
        rows = [header]
        for k in range(self.N + 1):
            row = [k, *self.states[k].tolist()]
            if k < self.N:
                row += [*self.inputs[k].tolist(), self.signal[k]]
            else:
                row += [""] * m + [""]
            row += [float(self.lyap_pwl[k]), float(self.lyap_auto[k])]
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.to_rows())
        return buf.getvalue()

    def to_dict(self):
        return {
            "states": self.states.tolist(),
            "inputs": self.inputs.tolist(),
            "signal": list(self.signal.values),
            "W": self.lyap_pwl.tolist(),
            "V_auto": self.lyap_auto.tolist(),
            "perturbations": self.perturbations.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _ball_sample(rng, n, radius):
    d = rng.standard_normal(n)
    nrm = np.linalg.norm(d)
    if nrm == 0:
        return np.zeros(n)
    return d / nrm * rng.uniform(0.0, radius)


def _shadow_walk(cert, sigma, N):
    """Automaton states visited along ``sigma`` from the graph's initial node, or None."""
    G = cert.graph
    if not (is_complete(G) and is_deterministic(G)):
        return None
    state = G.initial_node()
    visited = [state]
    for k in range(N):
        state = successor(G, state, int(sigma[k]))
        visited.append(state)
    return visited


def simulate(
    system: SwitchedSystem,
    controller,
    sigma,
    x0,
    N: int | None = None,
    perturbation: PerturbationModel | None = None,
) -> Trajectory:
    """Run the closed loop for ``N`` steps under the switching ``sigma``.

    With a perturbation of scale ``c`` each step reads
    ``x+ = A_i (x + d1) + B_i u + d2`` where ``u`` is computed at ``x + d1`` and
    ``|d1|, |d2| <= c |x|``.
    """
    if not isinstance(sigma, SwitchingSignal):
        sigma = SwitchingSignal(tuple(sigma), system.M)
    N = len(sigma) if N is None else int(N)
    if len(sigma) < N:
        raise ValueError(f"signal has {len(sigma)} values, need {N}")
    if any(v > system.M for v in sigma.values[:N]):
        raise ValueError("signal uses a mode the system does not have")
    cert = controller.certificate
    if cert.n != system.n:
        raise ValueError(f"controller is for n={cert.n}, system has n={system.n}")
    x = np.asarray(x0, dtype=float).reshape(system.n)
    policy = _Policy(controller)
    c = 0.0 if perturbation is None else float(perturbation.rho_scale)
    rng = np.random.default_rng(None if perturbation is None else perturbation.rng_seed)
    sig = sigma.values

    states = np.zeros((N + 1, system.n))
    inputs = np.zeros((N, system.m))
    perts = np.zeros((N, 2, system.n))
    states[0] = x
    for k in range(N):
        i = sig[k]
        A, B = system.mode(i)
        if c > 0:
            r = c * np.linalg.norm(x)
            d1, d2 = _ball_sample(rng, system.n, r), _ball_sample(rng, system.n, r)
        else:
            d1 = d2 = np.zeros(system.n)
        xt = x + d1
        u = np.asarray(policy.act(k, sig, xt), dtype=float).reshape(system.m)
        x = A @ xt + B @ u + d2
        states[k + 1] = x
        inputs[k] = u
        perts[k, 0], perts[k, 1] = d1, d2

    P = cert.P_stack()
    q = np.einsum("ki,sij,kj->ks", states, P, states)
    W = np.sqrt(np.maximum(q.min(axis=1), 0.0))
    walk = _shadow_walk(cert, sig, N)
    if walk is None:
        V = np.full(N + 1, np.nan)
    else:
        V = np.array([lyapunov_node(cert, s, states[k]) for k, s in enumerate(walk)])
    return Trajectory(states, inputs, SwitchingSignal(sig[:N], system.M), W, V, perts, walk or [])


def _greedy_step(system, policy, cert, k, sig, x):
    best = None
    for i in range(1, system.M + 1):
        trial = policy.fork()
        A, B = system.mode(i)
        cand = sig + [i]
        u = np.asarray(trial.act(k, cand, x), dtype=float).reshape(system.m)
        x_next = A @ x + B @ u
        w = lyapunov_pwl(cert, x_next)
        if best is None or w > best[0]:
            best = (w, i, x_next, trial)
    return best


def adversarial_signal(system: SwitchedSystem, controller, cert: Certificate | None, x0, N: int) -> SwitchingSignal:
    """Greedy one-step adversary: at each step pick the mode maximizing ``W`` at the next state.

    This is a cheap lower bound on the worst case over all switching signals,
    not the worst case itself. Ties go to the smallest mode.
    """
    cert = cert or controller.certificate
    policy = _Policy(controller)
    x = np.asarray(x0, dtype=float).reshape(system.n)
    sig: list = []
    for k in range(N):
        _, i, x, policy = _greedy_step(system, policy, cert, k, sig, x)
        sig.append(i)
    return SwitchingSignal(tuple(sig), system.M)


def exhaustive_worst(system: SwitchedSystem, controller, cert: Certificate | None, x0, N: int):
    """Largest ``W(x(N))`` over all ``M**N`` signals; only for small ``N``."""
    if N > EXHAUSTIVE_MAX_STEPS:
        raise ValueError(f"exhaustive search is limited to N <= {EXHAUSTIVE_MAX_STEPS}")
    cert = cert or controller.certificate
    best_w, best_sig = -1.0, None
    for sig in itertools.product(range(1, system.M + 1), repeat=N):
        traj = simulate(system, controller, SwitchingSignal(sig, system.M), x0, N)
        w = lyapunov_pwl(cert, traj.states[-1])
        if w > best_w:
            best_w, best_sig = w, sig
    return best_w, SwitchingSignal(best_sig, system.M)


def empirical_rate(traj: Trajectory) -> float:
    """``exp`` of the least-squares slope of ``log |x(k)|``.

    Returns 0 (with a :class:`DegenerateTrajectoryWarning`) when fewer than two
    states are nonzero.
    """
    norms = np.linalg.norm(traj.states, axis=1)
    keep = norms > 0
    if keep.sum() < 2:
        warnings.warn("fewer than two nonzero states; rate reported as 0", DegenerateTrajectoryWarning)
        return 0.0
    k = np.arange(len(norms))[keep]
    slope = np.polyfit(k, np.log(norms[keep]), 1)[0]
    return float(np.exp(slope))


@dataclass
class LevelSet:
    theta: np.ndarray
    points: np.ndarray
    active: list
    ellipses: dict

    def to_rows(self):
        rows = [["theta", "x", "y", "node"]]
        for t, (px, py), s in zip(self.theta, self.points, self.active):
            rows.append([float(t), float(px), float(py), "W:" + node_key(s)])
        for s, pts in self.ellipses.items():
            for t, (px, py) in zip(self.theta, pts):
                rows.append([float(t), float(px), float(py), node_key(s)])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.to_rows())
        return buf.getvalue()

    def to_dict(self):
        return {
            "theta": self.theta.tolist(),
            "W": self.points.tolist(),
            "active": [node_key(s) for s in self.active],
            "ellipses": {node_key(s): p.tolist() for s, p in self.ellipses.items()},
        }


def levelset_2d(cert: Certificate, samples: int = 360) -> LevelSet:
    """Unit level set of ``W`` on ``samples`` equally spaced rays, plus every node's ellipse.

    Since ``W`` is absolutely homogeneous of degree one, the boundary point on
    the ray of angle ``t`` is ``(cos t, sin t) / W(cos t, sin t)``.
    """
    if cert.n != 2:
        raise ValueError("level sets are only drawn for n = 2")
    if samples < 8:
        raise ValueError("need at least 8 samples")
    theta = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    P = cert.P_stack()
    q = np.einsum("ki,sij,kj->ks", dirs, P, dirs)
    radii = 1.0 / np.sqrt(q)
    idx = np.argmin(q, axis=1)
    nodes = cert.graph.nodes
    points = dirs * radii.max(axis=1)[:, None]
    ellipses = {s: dirs * radii[:, j][:, None] for j, s in enumerate(nodes)}
    return LevelSet(theta, points, [nodes[j] for j in idx], ellipses)


def robustness_probe(system, controller, x0s, signals, c0=0.05, N=60, threshold=1e-3, seed=0, max_halvings=20):
    """Halve ``c`` from ``c0`` until every perturbed run ends below ``threshold * |x0|``.

    Returns the first passing scale, or 0.0 if none passed.
    """
    c = c0
    for _ in range(max_halvings):
        ok = True
        for j, (x0, sig) in enumerate(zip(x0s, signals)):
            traj = simulate(system, controller, sig, x0, N, PerturbationModel(c, seed + j))
            if np.linalg.norm(traj.states[-1]) >= threshold * np.linalg.norm(x0):
                ok = False
                break
        if ok:
            return c
        c /= 2
    return 0.0

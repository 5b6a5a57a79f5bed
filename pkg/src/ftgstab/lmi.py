"""Graph-indexed stabilization LMIs: assembly, backend solve, gain recovery, checking.

For every edge ``(a, b, i)`` of a complete graph the synthesis condition is the
block inequality::

    [[Pbar_a,                      Pbar_a A_i^T + Kbar^T B_i^T],
     [A_i Pbar_a + B_i Kbar,       Pbar_b                       ]]  >= margin * I

with ``Kbar = Kbar_a`` (mode independent) or ``Kbar_{a,i}`` (mode dependent).
Its Schur complement is equivalent to

    (A_i + B_i K)^T P_b (A_i + B_i K) - P_a < 0,   P = Pbar^{-1},  K = Kbar Pbar^{-1}.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import clarabel
import numpy as np
import scipy.sparse as sp

from .graphs import (
    LabeledGraph,
    graph_from_dict,
    graph_to_dict,
    is_complete,
    is_deterministic,
    node_key,
)
from .model import SwitchedSystem, scale_system

log = logging.getLogger(__name__)

TOL_ENV = "FTGSTAB_SOLVER_TOL"
_SQRT2 = float(np.sqrt(2.0))
COND_LIMIT = 1e12


class SynthesisMode(str, enum.Enum):
    IND = "ind"
    DEP = "dep"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"ind": cls.IND, "independent": cls.IND, "dep": cls.DEP, "dependent": cls.DEP}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown synthesis mode {value!r} (use 'ind' or 'dep')") from None


class LmiError(ValueError):
    pass


class RecoveryError(LmiError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    margin_eps: float = 1e-7
    solver_tol: float = 1e-9
    max_iters: int = 200
    time_limit_s: float | None = None

    def __post_init__(self):
        if not self.margin_eps > 0 or not self.solver_tol > 0:
            raise ValueError("margin_eps and solver_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    @classmethod
    def from_env(cls, **kwargs):
        """Options with ``solver_tol`` taken from ``$FTGSTAB_SOLVER_TOL`` when set."""
        if TOL_ENV in os.environ and "solver_tol" not in kwargs:
            kwargs["solver_tol"] = float(os.environ[TOL_ENV])
        return cls(**kwargs)


@dataclass(frozen=True)
class EdgeBlock:
    source: object
    target: object
    label: int
    gain: object  # key into the Kbar dictionary
    A: np.ndarray
    B: np.ndarray


@dataclass(eq=False)
class LmiProblem:
    graph: LabeledGraph
    system: SwitchedSystem
    mode: SynthesisMode
    margin: float
    blocks: list
    p_keys: list
    k_keys: list

    @property
    def n(self):
        return self.system.n

    @property
    def m(self):
        return self.system.m

    @property
    def variable_count(self) -> int:
        n, m = self.n, self.m
        return len(self.p_keys) * n * (n + 1) // 2 + len(self.k_keys) * m * n

    def block_value(self, block: EdgeBlock, Pbar, Kbar) -> np.ndarray:
        return edge_block(Pbar[block.source], Pbar[block.target], Kbar[block.gain], block.A, block.B)

    def min_block_eigenvalue(self, Pbar, Kbar) -> float:
        mats = np.array([self.block_value(b, Pbar, Kbar) for b in self.blocks])
        return float(np.linalg.eigvalsh(mats).min())


def edge_block(Pbar_a, Pbar_b, Kbar, A, B) -> np.ndarray:
    """Numeric value of the symmetric ``2n x 2n`` synthesis block."""
    off = Pbar_a @ A.T + Kbar.T @ B.T
    blk = np.block([[Pbar_a, off], [off.T, Pbar_b]])
    return 0.5 * (blk + blk.T)


def lyapunov_residual(P_a, P_b, K, A, B) -> np.ndarray:
    """``(A + B K)^T P_b (A + B K) - P_a``; negative definite on a good edge."""
    Acl = A + B @ K
    R = Acl.T @ P_b @ Acl - P_a
    return 0.5 * (R + R.T)


def gain_key(node, label, mode):
    return (node, label) if mode is SynthesisMode.DEP else node


def assemble(system: SwitchedSystem, graph: LabeledGraph, mode, opts: SolverOptions | None = None) -> LmiProblem:
    """Build one block inequality per edge of ``graph`` for an (already scaled) system."""
    opts = opts or SolverOptions()
    mode = SynthesisMode.parse(mode)
    if graph.alphabet_size != system.M:
        raise LmiError(
            f"graph alphabet has {graph.alphabet_size} labels but the system has {system.M} modes"
        )
    if not is_complete(graph):
        raise LmiError("graph is not complete")
    if mode is SynthesisMode.DEP and not is_deterministic(graph):
        raise LmiError("mode-dependent synthesis needs a deterministic graph")
    blocks = []
    for a, b, i in graph.edges:
        A, B = system.mode(i)
        blocks.append(EdgeBlock(a, b, i, gain_key(a, i, mode), A, B))
    p_keys = list(graph.nodes)
    if mode is SynthesisMode.DEP:
        k_keys = [(s, i) for s in graph.nodes for i in range(1, system.M + 1)]
    else:
        k_keys = list(graph.nodes)
    return LmiProblem(graph, system, mode, opts.margin_eps, blocks, p_keys, k_keys)


FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
FAILURE = "failure"


@dataclass
class SolveResult:
    """Outcome of one backend call.

    ``status`` is ``"feasible"``, ``"infeasible"`` (backend proof) or
    ``"failure"`` (no conclusion). ``Pbar``/``Kbar`` are only set when feasible.
    """

    status: str
    backend_status: str
    solve_time: float
    Pbar: dict | None = None
    Kbar: dict | None = None
    min_eig: float | None = None
    message: str = ""

    @property
    def feasible(self):
        return self.status == FEASIBLE


def _unused_gains(problem: LmiProblem):
    """Gain keys that multiply only zero input matrices; they are fixed to zero."""
    used = set()
    for blk in problem.blocks:
        if np.any(blk.B != 0):
            used.add(blk.gain)
    return [k for k in problem.k_keys if k not in used]


def _svec_layout(d):
    """Upper-triangle, column-major positions used by the backend's PSD cone."""
    return [(r, c) for c in range(d) for r in range(c + 1)]


def _svec(S, layout):
    return np.array([S[r, c] * (1.0 if r == c else _SQRT2) for r, c in layout])


def _sym_basis(n):
    out = []
    for r, c in _svec_layout(n):
        E = np.zeros((n, n))
        E[r, c] = E[c, r] = 1.0
        out.append(E)
    return out


def _block_coefficients(n, m, A, B):
    """Columns ``svec`` of the edge block for unit values of ``(Qa, Qb, L)`` in turn."""
    layout = _svec_layout(2 * n)
    cols = []
    for E in _sym_basis(n):
        F = np.zeros((2 * n, 2 * n))
        F[:n, :n] = E
        F[:n, n:] = E @ A.T
        F[n:, :n] = A @ E
        cols.append(_svec(F, layout))
    for E in _sym_basis(n):
        F = np.zeros((2 * n, 2 * n))
        F[n:, n:] = E
        cols.append(_svec(F, layout))
    for u in range(m):
        for r in range(n):
            Lu = np.zeros((m, n))
            Lu[u, r] = 1.0
            off = Lu.T @ B.T
            F = np.zeros((2 * n, 2 * n))
            F[:n, n:] = off
            F[n:, :n] = off.T
            cols.append(_svec(F, layout))
    return np.column_stack(cols)


def _conic_form(problem: LmiProblem, eps: float):
    """Data ``(A, b, cones, q_index, l_index)`` for ``A x + s = b, s in cones``.

    Unknowns are ``Q = Pbar / eps`` (upper triangle) and the gains ``L = Kbar / eps``
    that multiply a nonzero input matrix; the constraints are ``Q >= I``,
    ``Q <= I / eps`` and every edge block ``>= I``.
    """
    n, m = problem.n, problem.m
    p = n * (n + 1) // 2
    zero_gains = set(_unused_gains(problem))
    q_index = {s: np.arange(j * p, (j + 1) * p) for j, s in enumerate(problem.p_keys)}
    nxt = p * len(problem.p_keys)
    l_index = {}
    for k in problem.k_keys:
        if k not in zero_gains:
            l_index[k] = np.arange(nxt, nxt + m * n)
            nxt += m * n
    nvar = nxt

    rows, cols, vals, b, cones = [], [], [], [], []
    sym = np.column_stack([_svec(E, _svec_layout(n)) for E in _sym_basis(n)])
    eye_n, eye_2n = _svec(np.eye(n), _svec_layout(n)), _svec(np.eye(2 * n), _svec_layout(2 * n))
    r_nz, c_nz = np.nonzero(sym)
    offset = 0
    for s in problem.p_keys:
        for sign, rhs in ((-1.0, -eye_n), (1.0, eye_n / eps)):
            rows.append(offset + r_nz)
            cols.append(q_index[s][c_nz])
            vals.append(sign * sym[r_nz, c_nz])
            b.append(rhs)
            cones.append(clarabel.PSDTriangleConeT(n))
            offset += p

    d2 = eye_2n.size
    by_label = {}
    for blk in problem.blocks:
        by_label.setdefault(blk.label, []).append(blk)
    dropped = np.full(m * n, -1)
    for blocks in by_label.values():
        C = _block_coefficients(n, m, blocks[0].A, blocks[0].B)
        r_loc, c_loc = np.nonzero(C)
        glob = np.array(
            [np.concatenate([q_index[k.source], q_index[k.target], l_index.get(k.gain, dropped)]) for k in blocks]
        )
        base = offset + d2 * np.arange(len(blocks))
        R = (base[:, None] + r_loc[None, :]).ravel()
        Cg = glob[:, c_loc].ravel()
        V = np.tile(-C[r_loc, c_loc], len(blocks))
        keep = Cg >= 0
        rows.append(R[keep])
        cols.append(Cg[keep])
        vals.append(V[keep])
        b += [-eye_2n] * len(blocks)
        cones += [clarabel.PSDTriangleConeT(2 * n)] * len(blocks)
        offset += d2 * len(blocks)

    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(offset, nvar)
    )
    return A, np.concatenate(b), cones, q_index, l_index, zero_gains


def _unpack_sym(v, n):
    Q = np.zeros((n, n))
    for val, (r, c) in zip(v, _svec_layout(n)):
        Q[r, c] = Q[c, r] = val
    return Q


def solve_feasibility(problem: LmiProblem, opts: SolverOptions | None = None) -> SolveResult:
    """Hand the block inequalities to the semidefinite backend (Clarabel).

    The problem is homogeneous in ``(Pbar, Kbar)``, so it is passed to the solver
    multiplied by ``1 / margin`` (``I <= Q <= I / margin``, blocks ``>= I``) and
    mapped back afterwards; in the original scaling an infeasibility gap would
    be of the order of ``margin`` and hard for the solver to certify. Every
    returned solution is re-checked by eigenvalues in the original scaling.
    """
    opts = opts or SolverOptions()
    eps = problem.margin
    n, m = problem.n, problem.m
    t0 = time.perf_counter()
    A, b, cones, q_index, l_index, zero_gains = _conic_form(problem, eps)
    nvar = A.shape[1]

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(opts.max_iters)
    settings.tol_feas = opts.solver_tol
    settings.tol_gap_abs = opts.solver_tol
    settings.tol_gap_rel = opts.solver_tol
    if opts.time_limit_s is not None:
        settings.time_limit = float(opts.time_limit_s)
    try:
        sol = clarabel.DefaultSolver(sp.csc_matrix((nvar, nvar)), np.zeros(nvar), A, b, cones, settings).solve()
    except Exception as exc:  # the extension raises plain exceptions on bad data
        return SolveResult(FAILURE, "solver_error", time.perf_counter() - t0, message=str(exc))
    elapsed = time.perf_counter() - t0
    status = str(sol.status)
    log.debug("backend status %s in %.3fs", status, elapsed)

    if sol.status == clarabel.SolverStatus.PrimalInfeasible:
        return SolveResult(INFEASIBLE, status, elapsed)
    if sol.status not in (clarabel.SolverStatus.Solved, clarabel.SolverStatus.AlmostSolved):
        return SolveResult(FAILURE, status, elapsed, message=f"backend returned {status}")

    x = np.asarray(sol.x, dtype=float)
    if not np.all(np.isfinite(x)):
        return SolveResult(FAILURE, status, elapsed, message="non-finite values")
    Pbar = {s: eps * _unpack_sym(x[idx], n) for s, idx in q_index.items()}
    Kbar = {}
    for k in problem.k_keys:
        Kbar[k] = np.zeros((m, n)) if k in zero_gains else eps * x[l_index[k]].reshape(m, n)
    min_eig = problem.min_block_eigenvalue(Pbar, Kbar)
    min_p = min(float(np.linalg.eigvalsh(p).min()) for p in Pbar.values())
    if min_eig < eps / 2 or min_p < eps / 2:
        return SolveResult(
            FAILURE,
            status,
            elapsed,
            min_eig=min_eig,
            message=f"returned point violates the blocks (min eigenvalue {min_eig:.3g})",
        )
    return SolveResult(FEASIBLE, status, elapsed, Pbar, Kbar, min_eig)


@dataclass(eq=False)
class Certificate:
    """Lyapunov matrices and gains certifying growth rate ``gamma`` on ``graph``."""

    graph: LabeledGraph
    mode: SynthesisMode
    gamma: float
    P: dict
    K: dict
    margin: float = 0.0

    def gain(self, node, label=None):
        if self.mode is SynthesisMode.DEP:
            if label is None:
                raise ValueError("mode-dependent gains need the current mode")
            return self.K[(node, label)]
        if label is not None:
            raise ValueError("mode-independent gains do not read the current mode")
        return self.K[node]

    def P_stack(self):
        return np.array([self.P[s] for s in self.graph.nodes])

    @property
    def n(self):
        return next(iter(self.P.values())).shape[0]

    def to_dict(self) -> dict:
        def kkey(k):
            if self.mode is SynthesisMode.DEP:
                return f"{node_key(k[0])}|{k[1]}"
            return node_key(k)

        return {
            "gamma": float(self.gamma),
            "mode": self.mode.value,
            "graph": graph_to_dict(self.graph),
            "P": {node_key(s): self.P[s].tolist() for s in self.graph.nodes},
            "K": {kkey(k): v.tolist() for k, v in self.K.items()},
            "margin": float(self.margin),
        }

    def __repr__(self):
        return (
            f"Certificate(mode={self.mode.value}, gamma={self.gamma:.6g}, "
            f"nodes={len(self.P)}, margin={self.margin:.3g})"
        )


def certificate_from_dict(data: dict) -> Certificate:
    graph = graph_from_dict(data["graph"])
    mode = SynthesisMode.parse(data["mode"])
    by_key = {node_key(s): s for s in graph.nodes}
    P = {by_key[k]: np.array(v, dtype=float) for k, v in data["P"].items()}
    K = {}
    for k, v in data["K"].items():
        if mode is SynthesisMode.DEP:
            word, label = k.rsplit("|", 1)
            key = (by_key[word], int(label))
        else:
            key = by_key[k]
        K[key] = np.array(v, dtype=float)
    cert = Certificate(graph, mode, float(data["gamma"]), P, K, float(data.get("margin", 0.0)))
    _check_keys(cert)
    return cert


def save_certificate(cert: Certificate, path) -> None:
    Path(path).write_text(json.dumps(cert.to_dict()) + "\n", encoding="utf-8")


def load_certificate(path) -> Certificate:
    return certificate_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_keys(cert: Certificate):
    nodes = set(cert.graph.nodes)
    if set(cert.P) != nodes:
        raise LmiError("certificate P keys do not match the graph nodes")
    if cert.mode is SynthesisMode.DEP:
        want = {(s, i) for s in nodes for i in range(1, cert.graph.alphabet_size + 1)}
    else:
        want = nodes
    if set(cert.K) != want:
        raise LmiError("certificate K keys do not match the graph")


def recover_gains(problem: LmiProblem, sol: SolveResult, gamma: float) -> Certificate:
    """Turn a feasible ``(Pbar, Kbar)`` into ``P = Pbar^{-1}``, ``K = Kbar Pbar^{-1}``."""
    if sol.Pbar is None or sol.Kbar is None:
        raise RecoveryError("solution carries no values")
    P, K = {}, {}
    for s in problem.p_keys:
        Pbar = 0.5 * (sol.Pbar[s] + sol.Pbar[s].T)
        cond = np.linalg.cond(Pbar)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise RecoveryError(f"Pbar at node {node_key(s)!r} is numerically singular (cond {cond:.3g})")
        Ps = np.linalg.inv(Pbar)
        P[s] = 0.5 * (Ps + Ps.T)
    for k in problem.k_keys:
        node = k[0] if problem.mode is SynthesisMode.DEP else k
        # Kbar Pbar^{-1} == (Pbar^{-1} Kbar^T)^T since Pbar is symmetric
        K[k] = np.linalg.solve(0.5 * (sol.Pbar[node] + sol.Pbar[node].T), sol.Kbar[k].T).T
    cert = Certificate(problem.graph, problem.mode, float(gamma), P, K)
    report = verify_certificate(problem.system, cert, 1.0)
    cert.margin = report.margin
    return cert


@dataclass
class VerificationReport:
    passed: bool
    margin: float
    worst_edge: tuple | None
    edge_values: np.ndarray = field(repr=False, default=None)
    min_p_eig: float = 0.0


def verify_certificate(system: SwitchedSystem, cert: Certificate, gamma: float | None = None) -> VerificationReport:
    """Check ``(A_i + B_i K)^T P_b (A_i + B_i K) - P_a < 0`` on every edge of the scaled system.

    ``gamma`` defaults to the certificate's own rate. ``margin`` is minus the
    largest edge eigenvalue.
    """
    _check_keys(cert)
    gamma = cert.gamma if gamma is None else gamma
    scaled = scale_system(system, gamma) if gamma != 1.0 else system
    G = cert.graph
    mats = []
    for a, b, i in G.edges:
        A, B = scaled.mode(i)
        K = cert.K[gain_key(a, i, cert.mode)]
        mats.append(lyapunov_residual(cert.P[a], cert.P[b], K, A, B))
    vals = np.linalg.eigvalsh(np.array(mats))[:, -1]
    worst = int(np.argmax(vals))
    min_p = min(float(np.linalg.eigvalsh(p)[0]) for p in cert.P.values())
    worst_val = float(vals[worst])
    passed = worst_val < 0 and min_p > 0
    return VerificationReport(passed, -worst_val, G.edges[worst], vals, min_p)


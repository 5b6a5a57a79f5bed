"""Feasibility at a fixed rate, bisection on the rate, and order embedding."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .graphs import FTG, GraphKind, LabeledGraph, build_ftg, build_graph
from .lmi import (
    FAILURE,
    FEASIBLE,
    INFEASIBLE,
    Certificate,
    RecoveryError,
    SolverOptions,
    SynthesisMode,
    assemble,
    recover_gains,
    solve_feasibility,
    verify_certificate,
)
from .model import SwitchedSystem, scale_system

log = logging.getLogger(__name__)


class BracketError(RuntimeError):
    pass


@dataclass
class ProbeResult:
    gamma: float
    status: str
    solve_time: float
    backend_status: str = ""
    certificate: Certificate | None = None
    message: str = ""

    @property
    def feasible(self):
        return self.status == FEASIBLE

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "status": self.status,
            "backend_status": self.backend_status,
            "solve_time": round(self.solve_time, 6),
        }


def feasible_at_rate(system: SwitchedSystem, graph: LabeledGraph, mode, gamma: float, opts: SolverOptions | None = None) -> ProbeResult:
    """Solve the graph LMIs for ``system`` scaled by ``gamma``.

    A feasible answer is only reported once the recovered certificate passes
    the direct eigenvalue check on the edge inequalities.
    """
    opts = opts or SolverOptions()
    mode = SynthesisMode.parse(mode)
    problem = assemble(scale_system(system, gamma), graph, mode, opts)
    sol = solve_feasibility(problem, opts)
    if not sol.feasible:
        return ProbeResult(gamma, sol.status, sol.solve_time, sol.backend_status, message=sol.message)
    try:
        cert = recover_gains(problem, sol, gamma)
    except RecoveryError as exc:
        return ProbeResult(gamma, FAILURE, sol.solve_time, sol.backend_status, message=str(exc))
    report = verify_certificate(system, cert, gamma)
    if not report.passed:
        return ProbeResult(
            gamma,
            FAILURE,
            sol.solve_time,
            sol.backend_status,
            message=f"certificate failed the edge check (worst value {-report.margin:.3g})",
        )
    cert.margin = report.margin
    return ProbeResult(gamma, FEASIBLE, sol.solve_time, sol.backend_status, cert)


@dataclass
class RateBound:
    graph_kind: GraphKind
    mode: SynthesisMode
    gamma_upper: float
    gamma_infeasible: float
    gamma_lower: float
    tol: float
    certificate: Certificate
    probes: list = field(default_factory=list)
    failures: int = 0

    @property
    def order(self):
        return self.graph_kind.order

    def to_dict(self):
        return {
            "graph": self.graph_kind.name,
            "order": self.graph_kind.order,
            "mode": self.mode.value,
            "gamma_upper": self.gamma_upper,
            "gamma_infeasible": self.gamma_infeasible,
            "gamma_lower": self.gamma_lower,
            "tol": self.tol,
            "failures": self.failures,
            "probes": [p.to_dict() for p in self.probes],
        }


def _probe(system, graph, mode, gamma, opts, probes):
    res = feasible_at_rate(system, graph, mode, gamma, opts)
    probes.append(res)
    if res.status == FAILURE:
        log.info("probe at %.6f inconclusive (%s); retrying with a larger budget", gamma, res.message)
        res = feasible_at_rate(system, graph, mode, gamma, replace(opts, max_iters=10 * opts.max_iters))
        probes.append(res)
    return res


def bisect_rate(
    system: SwitchedSystem,
    graph_kind: str = FTG,
    order: int = 1,
    mode=SynthesisMode.DEP,
    gamma_lo: float | None = None,
    gamma_hi: float | None = None,
    tol: float = 1e-3,
    opts: SolverOptions | None = None,
    max_failures: int = 5,
    graph: LabeledGraph | None = None,
) -> RateBound:
    """Bisect on the rate to bound the best attainable growth rate from above.

    The upper end always carries a verified certificate. Inconclusive probes
    are re-run once with ten times the iteration budget and, failing that,
    treated as "not shown feasible", which keeps the reported bound sound.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    opts = opts or SolverOptions()
    mode = SynthesisMode.parse(mode)
    if graph is None:
        graph = build_graph(graph_kind, system.M, order)
    if gamma_hi is None:
        gamma_hi = 1.01 * system.max_norm() or 1.0
    lo = 0.0 if gamma_lo is None else float(gamma_lo)
    hi = float(gamma_hi)
    if not 0 <= lo < hi:
        raise BracketError(f"need 0 <= gamma_lo < gamma_hi, got [{lo}, {hi}]")
    probes: list = []

    top = _probe(system, graph, mode, hi, opts, probes)
    if not top.feasible:
        raise BracketError(f"upper bracket gamma={hi} is not feasible ({top.status}: {top.message})")
    cert = top.certificate
    gamma_infeasible = lo
    failures = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        res = _probe(system, graph, mode, mid, opts, probes)
        if res.feasible:
            hi, cert = mid, res.certificate
        elif res.status == INFEASIBLE:
            lo = gamma_infeasible = mid
        else:
            failures += 1
            log.warning("probe at %.6f stayed inconclusive; moving the lower end up", mid)
            if failures > max_failures:
                raise BracketError(f"{failures} inconclusive probes, giving up")
            lo = mid
        log.debug("bracket [%.6f, %.6f]", lo, hi)
    return RateBound(graph.kind, mode, hi, gamma_infeasible, lo, tol, cert, probes, failures)


def _bisect_job(args):
    system, kind, order, mode, kwargs = args
    return bisect_rate(system, kind, order, mode, **kwargs)


def sweep_orders(system, graph_kind, orders, mode, max_workers=1, **kwargs):
    """Independent bisections over several graph orders, optionally in worker processes."""
    jobs = [(system, graph_kind, T, mode, kwargs) for T in orders]
    if max_workers <= 1:
        return [_bisect_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_bisect_job, jobs))


def embed_solution(cert: Certificate) -> Certificate:
    """Lift an order-``N`` feedback-tree certificate to order ``2N + 1`` without solving.

    Words of length at most ``N`` keep their own blocks; a longer word
    ``(w, v)`` with ``len(w) == N + 1`` reuses the blocks of ``v``. Every edge
    inequality of the lifted certificate is one of the original ones, so the
    margin carries over unchanged.
    """
    G = cert.graph
    if not G.is_ftg:
        raise ValueError("embedding needs a feedback-tree certificate")
    N = G.order
    big = build_ftg(G.alphabet_size, 2 * N + 1)

    def source(w):
        return w if len(w) <= N else w[N + 1 :]

    P = {w: cert.P[source(w)].copy() for w in big.nodes}
    if cert.mode is SynthesisMode.DEP:
        K = {(w, i): cert.K[(source(w), i)].copy() for w in big.nodes for i in range(1, G.alphabet_size + 1)}
    else:
        K = {w: cert.K[source(w)].copy() for w in big.nodes}
    return Certificate(big, cert.mode, cert.gamma, P, K, cert.margin)

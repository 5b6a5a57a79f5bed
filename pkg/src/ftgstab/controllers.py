"""Executable controllers built from a certificate.

* :class:`PwlController` -- piecewise-linear state feedback ``K_{kappa(x)} x``
  where ``kappa`` picks the node minimizing ``x^T P_s x``.
* :class:`MemoryController` -- linear feedback whose gain depends on the time
  and the last few modes through the cutting function.
* :class:`AutomatonController` -- the same gains scheduled by walking the graph.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphs import is_complete, is_deterministic, successor
from .lmi import Certificate, SynthesisMode, load_certificate


class ControllerError(ValueError):
    pass


def rem(T: int, k: int) -> int:
    if T < 1:
        raise ValueError("rem needs T >= 1")
    return k % T


def cut(T: int, sigma, k: int) -> tuple:
    """Last ``rem(T, k)`` modes before time ``k``: ``sigma[k - rem(T, k) : k]``."""
    if k < 0 or len(sigma) < k:
        raise ValueError(f"cut at k={k} needs {k} known modes, got {len(sigma)}")
    r = rem(T, k)
    return tuple(sigma[k - r : k])


def quadratic_values(P_stack: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``x^T P_s x`` for every stacked ``P_s``."""
    return np.einsum("i,sij,j->s", x, P_stack, x)


def _check_mode_arg(cert, current_mode):
    if cert.mode is SynthesisMode.DEP and current_mode is None:
        raise ControllerError("mode-dependent controller needs the current mode")
    if cert.mode is SynthesisMode.IND and current_mode is not None:
        raise ControllerError("mode-independent controller cannot read the current mode")


class PwlController:
    """State feedback ``u = K_{kappa(x)} x`` (or ``K_{kappa(x), i} x`` with mode ``i``).

    Ties in the argmin go to the first node in graph order.
    """

    kind = "pwl"

    def __init__(self, certificate: Certificate):
        self.certificate = certificate
        self._P = certificate.P_stack()

    def select(self, x):
        x = np.asarray(x, dtype=float)
        return self.certificate.graph.nodes[int(np.argmin(quadratic_values(self._P, x)))]

    def control(self, x, current_mode=None):
        cert = self.certificate
        _check_mode_arg(cert, current_mode)
        x = np.asarray(x, dtype=float)
        return cert.gain(self.select(x), current_mode) @ x


class MemoryController:
    """Time-varying linear feedback indexed by ``cut_{T+1}(sigma, k)``."""

    kind = "memory"

    def __init__(self, certificate: Certificate):
        if not certificate.graph.is_ftg:
            raise ControllerError("memory controllers need a feedback-tree certificate")
        self.certificate = certificate
        self.horizon = certificate.graph.order

    def node(self, k, sigma):
        return cut(self.horizon + 1, sigma, k)

    def gain(self, k, sigma):
        cert = self.certificate
        word = self.node(k, sigma)
        if cert.mode is SynthesisMode.DEP:
            if len(sigma) < k + 1:
                raise ValueError(f"mode-dependent memory gain at k={k} needs sigma(0..{k})")
            return cert.gain(word, int(sigma[k]))
        return cert.gain(word)

    def control(self, k, sigma, x):
        return self.gain(k, sigma) @ np.asarray(x, dtype=float)


@dataclass
class AutomatonController:
    """Gain scheduling by the state of the certificate's graph read as an automaton."""

    certificate: Certificate
    state: object = None
    kind: str = field(default="automaton", init=False)

    def __post_init__(self):
        G = self.certificate.graph
        if not (is_complete(G) and is_deterministic(G)):
            raise ControllerError("automaton controllers need a complete deterministic graph")
        if self.state is None:
            self.state = G.initial_node()
        elif self.state not in G:
            raise ControllerError(f"{self.state!r} is not a node of the graph")

    def step(self, label):
        self.state = successor(self.certificate.graph, self.state, int(label))
        return self.state

    def control(self, x, current_mode):
        """Return ``u`` for the current automaton state, then advance by ``current_mode``."""
        cert = self.certificate
        x = np.asarray(x, dtype=float)
        if cert.mode is SynthesisMode.DEP:
            u = cert.gain(self.state, int(current_mode)) @ x
        else:
            u = cert.gain(self.state) @ x
        self.step(current_mode)
        return u

    def clone(self):
        return AutomatonController(self.certificate, self.state)


def make_controller(kind: str, certificate: Certificate):
    kinds = {"pwl": PwlController, "memory": MemoryController, "automaton": AutomatonController}
    if kind not in kinds:
        raise ControllerError(f"unknown controller kind {kind!r}")
    return kinds[kind](certificate)


def load_controller(path):
    """Read a descriptor ``{"kind": ..., "certificate": <path relative to the descriptor>}``."""
    path = Path(path)
    desc = json.loads(path.read_text(encoding="utf-8"))
    cert_path = Path(desc["certificate"])
    if not cert_path.is_absolute():
        cert_path = path.parent / cert_path
    return make_controller(desc["kind"], load_certificate(cert_path))


def save_controller_descriptor(kind, certificate_path, path):
    Path(path).write_text(
        json.dumps({"kind": kind, "certificate": str(certificate_path)}) + "\n", encoding="utf-8"
    )

"""Orthonormal D x Q matrices from a chain of Householder reflections.

A chain holds ``Q`` unconstrained vectors of lengths ``D, D-1, ..., D-Q+1``.
Each vector ``v`` of length ``n`` defines the ``n x n`` block

    -sgn(v[0]) * (I - 2 u u^T),   u = (v + sgn(v[0]) |v| e_1) / |...|

embedded in the lower-right corner of ``I_D``. The product of these blocks,
truncated to its first ``Q`` columns, is a point on the Stiefel manifold. If
every vector is standard normal the result is Haar distributed.

Only the ``D x Q`` slab is ever materialized, so the forward map and its
vector-Jacobian product both cost ``O(D Q^2)``.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVector

NORM_FLOOR = 1e-12


def sgn(x):
    """Sign with the convention ``sgn(0) = +1``."""
    return 1.0 if x >= 0 else -1.0


def chain_sizes(D, Q):
    """Lengths of the chain vectors, ``[D, D-1, ..., D-Q+1]``."""
    if not 1 <= Q <= D:
        raise ValueError(f"need 1 <= Q <= D, got D={D}, Q={Q}")
    return [D - k for k in range(Q)]


def chain_dim(D, Q):
    return sum(chain_sizes(D, Q))


@dataclass(frozen=True)
class HouseholderChain:
    D: int
    Q: int
    vs: tuple

    def __post_init__(self):
        sizes = chain_sizes(self.D, self.Q)
        vs = tuple(np.asarray(v, dtype=np.float64).reshape(-1) for v in self.vs)
        if len(vs) != self.Q:
            raise ValueError(f"expected {self.Q} chain vectors, got {len(vs)}")
        for k, (v, n) in enumerate(zip(vs, sizes)):
            if v.shape != (n,):
                raise ValueError(f"chain vector {k} must have length {n}, got {v.shape[0]}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"chain vector {k} is not finite")
            if math.sqrt(v @ v) <= NORM_FLOOR:
                raise DegenerateVector(f"chain vector {k} has norm below {NORM_FLOOR}")
        object.__setattr__(self, "vs", vs)

    @classmethod
    def from_flat(cls, flat, D, Q):
        flat = np.asarray(flat, dtype=np.float64)
        sizes = chain_sizes(D, Q)
        if flat.shape != (sum(sizes),):
            raise ValueError(f"flat chain must have length {sum(sizes)}, got {flat.shape}")
        bounds = np.cumsum([0] + sizes)
        return cls(D, Q, tuple(flat[bounds[k] : bounds[k + 1]] for k in range(Q)))

    @classmethod
    def random(cls, D, Q, rng):
        """Chain with i.i.d. standard normal vectors (Haar distributed ``U``)."""
        return cls(D, Q, tuple(rng.standard_normal(n) for n in chain_sizes(D, Q)))

    def flat(self):
        return np.concatenate(self.vs)


def _reflector_parts(v):
    norm_v = math.sqrt(v @ v)
    if norm_v <= NORM_FLOOR:
        raise DegenerateVector(f"vector norm {norm_v:.3e} is below {NORM_FLOOR}")
    s = sgn(v[0])
    w = v.copy()
    w[0] += s * norm_v
    norm_w = math.sqrt(w @ w)
    return w / norm_w, s, norm_v, norm_w


def reflector(v):
    """Unit vector ``u`` of the Householder reflection that maps ``v`` onto ``e_1``."""
    return _reflector_parts(np.asarray(v, dtype=np.float64))[0]


def householder_block(v):
    """Dense ``n x n`` block ``-sgn(v[0]) (I - 2 u u^T)``; it maps ``v`` to ``|v| e_1``."""
    v = np.asarray(v, dtype=np.float64)
    u, s, _, _ = _reflector_parts(v)
    return -s * (np.eye(v.shape[0]) - 2.0 * np.outer(u, u))


def _forward(chain):
    D, Q = chain.D, chain.Q
    slab = np.eye(D, Q)
    tape = []
    # right-to-left: the shortest vector acts first
    for k in range(Q - 1, -1, -1):
        u, s, norm_v, norm_w = _reflector_parts(chain.vs[k])
        block = slab[k:, k:]
        tape.append((k, u, -s, norm_v, norm_w, block.copy()))
        slab[k:, k:] = -s * (block - 2.0 * np.outer(u, u @ block))
    return slab, tape


def apply_chain(chain):
    """First ``Q`` columns of the product of the chain's reflections."""
    return _forward(chain)[0]


def _backward(chain, tape, cotangent):
    bar = np.array(cotangent, dtype=np.float64, copy=True)
    grads = [None] * chain.Q
    # tape is in application order, so walk it backwards
    for k, u, scale, norm_v, norm_w, block in reversed(tape):
        bar_out = bar[k:, k:]
        bar_u = -2.0 * scale * (block @ (bar_out.T @ u) + bar_out @ (block.T @ u))
        bar[k:, k:] = scale * (bar_out - 2.0 * np.outer(u, u @ bar_out))
        bar_w = (bar_u - u * (u @ bar_u)) / norm_w
        v = chain.vs[k]
        grads[k] = bar_w + sgn(v[0]) * bar_w[0] * v / norm_v
    return grads


def chain_gradient(chain, cotangent):
    """Gradients of ``<cotangent, U>`` with respect to every chain vector.

    ``cotangent`` is ``dL/dU`` for some scalar loss ``L``; the return value is
    a list of arrays shaped like ``chain.vs``.
    """
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != (chain.D, chain.Q):
        raise ValueError(f"cotangent must have shape {(chain.D, chain.Q)}, got {cotangent.shape}")
    _, tape = _forward(chain)
    return _backward(chain, tape, cotangent)


def chain_from_stiefel(U, norms=None):
    """A chain whose :func:`apply_chain` reproduces the orthonormal ``U``.

    Column ``k`` of ``U`` equals the first ``k`` reflections applied to
    ``[0; v_k / |v_k|]``, and every block is an involution, so the unit
    directions are recovered by undoing the reflections one at a time.
    ``norms`` sets the length of each vector (default ``sqrt(n)``, the
    typical length of a standard normal vector of size ``n``).
    """
    U = np.array(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] > U.shape[0]:
        raise ValueError(f"U must be D x Q with Q <= D, got shape {U.shape}")
    D, Q = U.shape
    if not np.allclose(U.T @ U, np.eye(Q), atol=1e-8):
        raise ValueError("U must have orthonormal columns")
    sizes = chain_sizes(D, Q)
    if norms is None:
        norms = [math.sqrt(n) for n in sizes]
    vs = []
    for k in range(Q):
        direction = U[k:, k]
        direction = direction / math.sqrt(direction @ direction)
        v = norms[k] * direction
        vs.append(v)
        u, s, _, _ = _reflector_parts(v)
        block = U[k:, k:]
        U[k:, k:] = -s * (block - 2.0 * np.outer(u, u @ block))
    return HouseholderChain(D, Q, tuple(vs))


def apply_chain_vjp(chain):
    """Return ``U`` and a function mapping ``dL/dU`` to the flat chain gradient."""
    slab, tape = _forward(chain)

    def vjp(cotangent):
        return np.concatenate(_backward(chain, tape, cotangent))

    return slab, vjp

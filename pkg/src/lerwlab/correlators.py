"""Exact multipoint local-time correlators in the half-plane and their diagram sums.

A :class:`CorrelatorSpec` fixes the start point ``x0`` and the terminal
boundary condition: a point ``x_inf`` (chordal) or an interval (dipolar).
The connected correlator is the sum over orderings of the insertions of the
chain ``K(x0, z_1) G(z_1, z_2) ... G(z_{n-1}, z_n) T(z_n)`` where ``T`` is the
harmonic measure of the interval (dipolar) or ``K(x_inf, .)`` (chordal).
"""

import itertools
from dataclasses import dataclass
from math import factorial

import numpy as np

from .geometry import BoundaryInterval, DomainError, as_interval, excursion_kernel, \
    green_h, harmonic_measure_h, partition_chordal, partition_dipolar

MAX_CHAIN = 8
MAX_DIAGRAM = 8


@dataclass(frozen=True)
class CorrelatorSpec:
    x0: float
    terminal: object          # float (chordal x_inf) or BoundaryInterval (dipolar)
    insertions: tuple = ()

    def __post_init__(self):
        t = self.terminal
        if isinstance(t, (tuple, list, BoundaryInterval)):
            t = as_interval(t)
            if t.lo <= self.x0 <= t.hi:
                raise DomainError("x0 inside the terminal interval")
        else:
            t = float(t)
            if t == self.x0:
                raise DomainError("x_inf coincides with x0")
        object.__setattr__(self, "terminal", t)
        z = tuple(complex(v) for v in self.insertions)
        for v in z:
            if v.imag <= 0:
                raise DomainError("insertions must be bulk points")
        for a, b in itertools.combinations(z, 2):
            if abs(a - b) < 1e-12:
                raise DomainError("coincident insertions")
        object.__setattr__(self, "insertions", z)

    @property
    def chordal(self):
        return not isinstance(self.terminal, BoundaryInterval)

    @property
    def n(self):
        return len(self.insertions)

    def with_insertions(self, z):
        return CorrelatorSpec(self.x0, self.terminal, tuple(z))

    def terminal_factor(self, z):
        if self.chordal:
            return excursion_kernel(self.terminal, z)
        return harmonic_measure_h(z, self.terminal)

    def partition(self):
        """Critical partition function ``Z0`` (the ``n = 0`` correlator)."""
        if self.chordal:
            return partition_chordal(self.x0, self.terminal)
        return partition_dipolar(self.x0, self.terminal)


def _factors(spec):
    z = np.array(spec.insertions)
    n = len(z)
    G = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            G[a, b] = G[b, a] = green_h(z[a], z[b])
    K = excursion_kernel(spec.x0, z) if n else np.zeros(0)
    T = np.array([spec.terminal_factor(v) for v in z])
    return K, G, T


def connected_correlator(spec):
    """Sum over all ``n!`` orderings of the boundary-to-boundary chain.

    Evaluated exactly by dynamic programming over (visited set, last point),
    ``O(2^n n^2)``; ``n = 0`` returns ``Z0``.
    """
    n = spec.n
    if n == 0:
        return spec.partition()
    if n > MAX_CHAIN:
        raise ValueError(f"n = {n} exceeds {MAX_CHAIN}")
    K, G, T = _factors(spec)
    full = (1 << n) - 1
    dp = np.zeros((1 << n, n))
    for k in range(n):
        dp[1 << k, k] = K[k]
    for mask in range(1, full + 1):
        for last in range(n):
            v = dp[mask, last]
            if v == 0.0 or not mask >> last & 1:
                continue
            for nxt in range(n):
                if not mask >> nxt & 1:
                    dp[mask | 1 << nxt, nxt] += v * G[last, nxt]
    return float(dp[full] @ T)


def connected_correlator_bruteforce(spec):
    """Literal permutation sum (reference for small ``n``)."""
    n = spec.n
    if n == 0:
        return spec.partition()
    K, G, T = _factors(spec)
    total = 0.0
    for p in itertools.permutations(range(n)):
        term = K[p[0]] * T[p[-1]]
        for a, b in zip(p[:-1], p[1:]):
            term *= G[a, b]
        total += term
    return total


def bulk_correlator(w, spec):
    """``C(w; z_1..z_n) = E^w[l(z_1)...l(z_n) 1{exit}]`` for a bulk start ``w``.

    Same chain sum with ``G(w, .)`` in place of ``K(x0, .)``; ``n = 0`` gives
    the terminal factor at ``w`` itself.
    """
    w = complex(w)
    z = spec.insertions
    n = len(z)
    if n == 0:
        return float(spec.terminal_factor(w))
    _, G, T = _factors(spec)
    Gw = np.array([green_h(w, v) for v in z])
    total = 0.0
    for p in itertools.permutations(range(n)):
        term = Gw[p[0]] * T[p[-1]]
        for a, b in zip(p[:-1], p[1:]):
            term *= G[a, b]
        total += term
    return float(total)


def correlator_recursion_check(spec, probes, h):
    """Max ``|Laplacian_h C / 2|`` over probe points, 5-point stencil of spacing ``h``.

    Away from the insertions the bulk-started correlator is harmonic in its
    first argument. Probes closer than ``3h`` to an insertion (where the delta
    sources sit) or to the real axis are skipped. Returns
    ``(max_residual, n_used)``.
    """
    z = np.array(spec.insertions)
    worst = 0.0
    used = 0
    for w in np.atleast_1d(np.asarray(probes, dtype=complex)):
        if w.imag <= 3 * h or (len(z) and np.min(np.abs(z - w)) < 3 * h):
            continue
        c0 = bulk_correlator(w, spec)
        lap = sum(bulk_correlator(w + d, spec) for d in (h, -h, 1j * h, -1j * h)) - 4 * c0
        worst = max(worst, abs(0.5 * lap / h ** 2))
        used += 1
    return worst, used


def endpoint_density(x0, interval, x_inf):
    """Density of the end point of dipolar LERW from ``x0`` on ``interval`` at ``x_inf``."""
    lo, hi = as_interval(interval)
    if lo <= x0 <= hi:
        raise DomainError("x0 inside the interval")
    if not lo < x_inf < hi:
        raise ValueError("x_inf outside the interval")
    return (x0 - hi) * (x0 - lo) / ((hi - lo) * (x_inf - x0) ** 2)


# --- diagram sums -------------------------------------------------------------

@dataclass(frozen=True)
class DiagramTerm:
    """One term of the diagram expansion: a boundary chain plus closed loops."""
    chain: tuple          # ordered insertion indices from x0 to the terminal
    cycles: tuple = ()    # each a tuple of indices in cyclic order, length >= 2

    def __post_init__(self):
        used = list(self.chain) + [i for c in self.cycles for i in c]
        if len(used) != len(set(used)):
            raise ValueError("indices repeated across blocks")
        if any(len(c) < 2 for c in self.cycles):
            raise ValueError("loops of length one are excluded")

    @property
    def connected(self):
        return not self.cycles


def _set_partitions(items, min_block=2):
    """Set partitions of ``items`` with all blocks of size ``>= min_block``."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for k in range(min_block - 1, len(rest) + 1):
        for others in itertools.combinations(rest, k):
            block = (first,) + others
            remaining = [x for x in rest if x not in others]
            for tail in _set_partitions(remaining, min_block):
                yield [block] + tail


def _cyclic_orders(block):
    """The ``(m-1)!`` cyclic orderings of ``block`` (first element fixed)."""
    first, rest = block[0], block[1:]
    for p in itertools.permutations(rest):
        yield (first,) + p


def diagram_terms(n):
    """All terms: chain on ``J``, loops covering the complement."""
    idx = range(n)
    for r in range(n + 1):
        for J in itertools.combinations(idx, r):
            comp = [i for i in idx if i not in J]
            for chain in itertools.permutations(J):
                for part in _set_partitions(comp):
                    for orders in itertools.product(*[list(_cyclic_orders(b)) for b in part]):
                        yield DiagramTerm(chain, tuple(orders))


def _cycle_value(G, cyc):
    v = 1.0
    for a, b in zip(cyc, cyc[1:] + cyc[:1]):
        v *= G[a, b]
    return v


def term_value(spec, term, loop_sign=1, factors=None):
    K, G, T = factors if factors is not None else _factors(spec)
    ch = term.chain
    if ch:
        v = K[ch[0]] * T[ch[-1]]
        for a, b in zip(ch[:-1], ch[1:]):
            v *= G[a, b]
    else:
        v = spec.partition()
    for cyc in term.cycles:
        v *= loop_sign * _cycle_value(G, cyc)
    return v


def wick_sum(spec, loop_sign=1):
    """Full diagram sum: connected chain times closed ``G``-loops on the rest.

    Each loop of ``m >= 2`` points is summed over its ``(m-1)!`` cyclic
    orderings and carries the factor ``loop_sign`` (``+1`` or ``-1``).
    """
    if spec.n > MAX_DIAGRAM:
        raise ValueError(f"n = {spec.n} exceeds {MAX_DIAGRAM}")
    f = _factors(spec)
    return float(sum(term_value(spec, t, loop_sign, f) for t in diagram_terms(spec.n)))


def wick_sum_permutations(spec, loop_sign=1):
    """Independent enumerator: permutations of ``{B, 0..n-1}`` with no fixed insertion.

    A permutation's cycle through the boundary node ``B`` is the chain (empty
    chain when ``B`` is fixed), every other cycle is a loop.
    """
    n = spec.n
    K, G, T = _factors(spec)
    B = n
    total = 0.0
    for sigma in itertools.permutations(range(n + 1)):
        if any(sigma[i] == i for i in range(n)):
            continue
        v = 1.0
        for i in range(n + 1):
            j = sigma[i]
            if i == B:
                v *= spec.partition() if j == B else K[j]
            elif j == B:
                v *= T[i]
            else:
                v *= G[i, j]
        seen = set()
        for i in range(n):
            if i in seen:
                continue
            # walk the whole cycle of i so chain members are all marked
            j, on_chain = i, False
            while True:
                seen.add(j)
                on_chain |= j == B
                j = sigma[j]
                if j == i:
                    break
            if not on_chain:
                v *= loop_sign
        total += v
    return total


def vacuum(points, loop_sign=1):
    """Closed-loop sum on ``points``: all loop partitions, product of loop factors."""
    z = [complex(p) for p in points]
    n = len(z)
    if n == 0:
        return 1.0
    G = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            G[a, b] = G[b, a] = green_h(z[a], z[b])

    def rec(items):
        if not items:
            return 1.0
        first, rest = items[0], items[1:]
        total = 0.0
        for k in range(1, len(rest) + 1):
            for others in itertools.combinations(rest, k):
                loops = sum(_cycle_value(G, (first,) + p) for p in itertools.permutations(others))
                remaining = tuple(x for x in rest if x not in others)
                total += loop_sign * loops * rec(remaining)
        return total

    return rec(tuple(range(n)))


def cumulant_factorization_check(spec, max_n=None, loop_sign=1):
    """Max relative deviation between the diagram sum and ``sum_J connected(J) vacuum(J^c)``.

    Checked for the first ``k`` insertions of ``spec``, ``k = 1..max_n``.
    """
    max_n = spec.n if max_n is None else max_n
    worst = 0.0
    for k in range(1, max_n + 1):
        z = spec.insertions[:k]
        sub = spec.with_insertions(z)
        lhs = wick_sum(sub, loop_sign)
        rhs = 0.0
        for r in range(k + 1):
            for J in itertools.combinations(range(k), r):
                comp = [z[i] for i in range(k) if i not in J]
                rhs += connected_correlator(spec.with_insertions([z[i] for i in J])) \
                    * vacuum(comp, loop_sign)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    return worst


def count_terms(n):
    """Number of diagram terms for ``n`` insertions (derangement-type count)."""
    return sum(1 for _ in diagram_terms(n))


def n_orderings(n):
    return factorial(n)

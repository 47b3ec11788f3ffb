"""Brute-force photon-number simulation of the two-station interferometer.

States are dense complex arrays indexed by occupation tuples, one axis per
optical mode, with a common per-mode cutoff.  Everything here is exact up to
the truncation of the coherent local-oscillator fields, which is controlled
by :class:`TruncationPolicy`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.stats import poisson

from .model import EventPattern, InputSpec, Setting


class TruncationError(RuntimeError):
    """The requested state needs a cutoff above the configured hard cap."""


@dataclass(frozen=True)
class TruncationPolicy:
    tail_tol: float = 1e-12
    floor: int = 12
    hard_cap: int = 60
    mode_count: int = 4

    def cutoff_for(self, alpha: float) -> int:
        """Per-mode cutoff for a coherent field of amplitude ``alpha``.

        Starts from ``max(floor, ceil(a2 + 10*sqrt(a2 + 1)))`` and grows until
        the Poisson tail above the cutoff is below ``tail_tol / mode_count``.
        """
        mean = alpha * alpha
        n = max(self.floor, math.ceil(mean + 10.0 * math.sqrt(mean + 1.0)))
        budget = self.tail_tol / self.mode_count
        while n <= self.hard_cap and mean > 0.0 and poisson.sf(n, mean) >= budget:
            n += 1
        if n > self.hard_cap:
            raise TruncationError(
                f"alpha={alpha:g} needs a cutoff above the hard cap {self.hard_cap}"
            )
        return n


DEFAULT_POLICY = TruncationPolicy()


@dataclass(frozen=True)
class LossChannel:
    """Pure-loss channel of transmissivity ``eta``."""

    eta: float

    def __post_init__(self):
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"transmissivity must lie in [0, 1], got {self.eta!r}")


@dataclass
class FockVector:
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        shape = self.amplitudes.shape
        if not shape or len(set(shape)) != 1:
            raise ValueError(f"amplitude array must be a hypercube, got shape {shape}")

    @property
    def mode_count(self) -> int:
        return self.amplitudes.ndim

    @property
    def cutoff(self) -> int:
        return self.amplitudes.shape[0] - 1

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def padded(self, cutoff: int) -> "FockVector":
        if cutoff < self.cutoff:
            raise ValueError("padding cannot shrink the cutoff")
        extra = cutoff - self.cutoff
        return FockVector(np.pad(self.amplitudes, [(0, extra)] * self.mode_count))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def coherent_state(alpha: float, phi: float = 0.0, policy: TruncationPolicy = DEFAULT_POLICY,
                   cutoff: int | None = None) -> FockVector:
    """Single-mode coherent state ``|alpha e^{i phi}>`` truncated at the policy cutoff."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if cutoff is None:
        cutoff = policy.cutoff_for(alpha)
    z = alpha * np.exp(1j * phi)
    amps = np.zeros(cutoff + 1, dtype=complex)
    amps[0] = math.exp(-alpha * alpha / 2.0)
    for n in range(1, cutoff + 1):
        amps[n] = amps[n - 1] * z / math.sqrt(n)
    return FockVector(amps)


def build_input(spec: InputSpec, policy: TruncationPolicy = DEFAULT_POLICY,
                cutoff: int | None = None) -> FockVector:
    """Two-mode source state on (b1, b2)."""
    if cutoff is None:
        cutoff = policy.floor
    amps = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
    for (n1, n2), c in spec.amplitudes().items():
        amps[n1, n2] = c
    return FockVector(amps)


def tensor(*states: FockVector) -> FockVector:
    """Tensor product, padding every factor to the largest cutoff."""
    cutoff = max(s.cutoff for s in states)
    out = np.ones((), dtype=complex)
    for s in states:
        out = np.multiply.outer(out, s.padded(cutoff).amplitudes)
    return FockVector(out)


@lru_cache(maxsize=8192)
def _bs_block(total: int, chi: float) -> np.ndarray:
    # exp(i chi (a^dag b + b^dag a)) restricted to the subspace of fixed total
    # photon number; basis index = photons in the first mode
    if total == 0:
        return np.ones((1, 1), dtype=complex)
    k = np.arange(total)
    off = np.sqrt((k + 1.0) * (total - k))
    w, v = eigh_tridiagonal(np.zeros(total + 1), off)
    return (v * np.exp(1j * chi * w)) @ v.T


def apply_beamsplitter(state: FockVector, modes: tuple[int, int], chi: float) -> FockVector:
    """Mix ``modes = (i, j)`` with the unitary [[cos, i sin], [i sin, cos]].

    Mode ``i`` plays the role of input ``a`` and becomes output ``c``; mode
    ``j`` is input ``b`` and becomes output ``d``.  Amplitudes pushed above
    the cutoff are dropped.
    """
    i, j = modes
    k = state.mode_count
    if i == j or not (0 <= i < k and 0 <= j < k):
        raise ValueError(f"invalid mode pair {modes} for a {k}-mode state")
    if chi == 0.0:
        return FockVector(state.amplitudes.copy())

    amps = np.moveaxis(state.amplitudes, (i, j), (0, 1))
    dim = amps.shape[0]
    flat = amps.reshape(dim, dim, -1)
    live = np.flatnonzero(np.any(flat != 0, axis=(0, 1)))
    sub = flat[:, :, live]
    occupied = np.any(sub != 0, axis=2)
    out = np.zeros_like(sub)
    for total in range(2 * dim - 1):
        ks = np.arange(max(0, total - dim + 1), min(total, dim - 1) + 1)
        hit = occupied[ks, total - ks]
        if not hit.any():
            continue
        u = _bs_block(total, chi)
        k_in = ks[hit]
        out[ks, total - ks, :] += u[np.ix_(ks, k_in)] @ sub[k_in, total - k_in, :]

    result = np.zeros_like(flat)
    result[:, :, live] = out
    result = np.moveaxis(result.reshape(amps.shape), (0, 1), (i, j))
    return FockVector(result)


@lru_cache(maxsize=256)
def loss_matrix(eta: float, cutoff: int) -> np.ndarray:
    """``L[k, n]``: probability that ``n`` photons leave ``k`` after loss ``eta``.

    Built by sending ``|n>`` and a vacuum ancilla through a beamsplitter of
    transmissivity ``eta`` and tracing out the ancilla.
    """
    chi = math.acos(math.sqrt(eta))
    mat = np.zeros((cutoff + 1, cutoff + 1))
    for n in range(cutoff + 1):
        amps = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
        amps[n, 0] = 1.0
        out = apply_beamsplitter(FockVector(amps), (0, 1), chi)
        mat[:, n] = out.probabilities().sum(axis=1)
    mat.setflags(write=False)
    return mat


def apply_loss(state: FockVector | np.ndarray, mode: int, channel: LossChannel) -> np.ndarray:
    """Photon-number distribution after loss on one mode.

    Accepts a state or an already-computed probability tensor and returns the
    probability tensor, so losses on several modes can be chained.
    """
    probs = state.probabilities() if isinstance(state, FockVector) else np.asarray(state, float)
    if not 0 <= mode < probs.ndim:
        raise ValueError(f"mode {mode} out of range for {probs.ndim} modes")
    if channel.eta == 1.0:
        return probs.copy()
    mat = loss_matrix(float(channel.eta), probs.shape[mode] - 1)
    return np.moveaxis(np.tensordot(mat, probs, axes=([1], [mode])), 0, mode)


def detection_prob(state: FockVector, pattern: tuple[int, ...]) -> float:
    if len(pattern) != state.mode_count:
        raise ValueError(f"pattern {pattern} does not match {state.mode_count} modes")
    if any(n < 0 or n > state.cutoff for n in pattern):
        raise ValueError(f"pattern {pattern} exceeds the cutoff {state.cutoff}")
    return float(abs(state.amplitudes[tuple(pattern)]) ** 2)


def station_state(spec: InputSpec, s1: Setting, s2: Setting,
                  policy: TruncationPolicy = DEFAULT_POLICY) -> FockVector:
    """Output state on modes (c1, d1, c2, d2) after both local beamsplitters.

    Each beamsplitter only touches its own station, so the output is
    assembled as ``sum_jk c_jk U1|alpha1, j> (x) U2|alpha2, k>`` instead of
    pushing a full four-mode array through both unitaries.
    """
    cutoff = max(policy.cutoff_for(s1.alpha), policy.cutoff_for(s2.alpha)) + spec.max_photons
    kmax = spec.max_photons
    coeffs = np.zeros((kmax + 1, kmax + 1), dtype=complex)
    for (j, k), c in spec.amplitudes().items():
        coeffs[j, k] = c

    def station(s: Setting) -> np.ndarray:
        lo = coherent_state(s.alpha, s.phi, cutoff=cutoff)
        blocks = []
        for k in range(kmax + 1):
            b = np.zeros(cutoff + 1, dtype=complex)
            b[k] = 1.0
            blocks.append(apply_beamsplitter(tensor(lo, FockVector(b)), (0, 1), s.chi).amplitudes)
        return np.stack(blocks, axis=-1)

    x1, x2 = station(s1), station(s2)
    return FockVector(np.einsum("abj,jk,cdk->abcd", x1, coeffs, x2, optimize=True))


def station_state_dense(spec: InputSpec, s1: Setting, s2: Setting,
                        policy: TruncationPolicy = DEFAULT_POLICY) -> FockVector:
    """Same as :func:`station_state`, evolving the full four-mode array."""
    cutoff = max(policy.cutoff_for(s1.alpha), policy.cutoff_for(s2.alpha)) + spec.max_photons
    state = tensor(
        coherent_state(s1.alpha, s1.phi, cutoff=cutoff),
        build_input(spec, cutoff=cutoff),
        coherent_state(s2.alpha, s2.phi, cutoff=cutoff),
    )
    # mode order is now (a1, b1, b2, a2)
    state = apply_beamsplitter(state, (0, 1), s1.chi)
    state = apply_beamsplitter(state, (3, 2), s2.chi)
    return FockVector(np.transpose(state.amplitudes, (0, 1, 3, 2)))


def oracle_distribution(spec: InputSpec, s1: Setting, s2: Setting, eta: float = 1.0,
                        policy: TruncationPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Joint photon-count distribution ``P[n1, m1, n2, m2]`` over (c1, d1, c2, d2)."""
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"efficiency must lie in (0, 1], got {eta!r}")
    probs = station_state(spec, s1, s2, policy).probabilities()
    if eta < 1.0:
        channel = LossChannel(eta)
        for mode in range(4):
            probs = apply_loss(probs, mode, channel)
    return probs


def _pick(probs: np.ndarray, e1: EventPattern | None, e2: EventPattern | None) -> float:
    dim = probs.shape[0]
    idx = []
    for e in (e1, e2):
        if e is None:
            idx += [slice(None), slice(None)]
        elif e.n >= dim or e.m >= dim:
            return 0.0
        else:
            idx += [e.n, e.m]
    return float(np.sum(probs[tuple(idx)]))


def oracle_event_prob(spec: InputSpec, s1: Setting, s2: Setting,
                      e1: EventPattern | None, e2: EventPattern | None,
                      eta: float = 1.0, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    """Probability of ``e1`` at station 1 and ``e2`` at station 2.

    Passing ``None`` for one event sums over that station's outcomes, which
    gives the other station's local probability.
    """
    return _pick(oracle_distribution(spec, s1, s2, eta, policy), e1, e2)

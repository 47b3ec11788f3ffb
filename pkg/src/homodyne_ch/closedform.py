"""Closed-form detection probabilities for the homodyne stations.

Conventions: the local oscillator enters port ``a`` as ``|alpha e^{i phi}>``,
the beamsplitter maps ``c = cos(chi) a + i sin(chi) b`` and
``d = i sin(chi) a + cos(chi) b`` with ``R = sin(chi)**2``, and an event
``(n, m)`` counts ``n`` photons in ``c`` and ``m`` in ``d``.

Scalar single-photon formulas use :mod:`math`; the general-pattern formulas
broadcast over numpy arrays of photon counts so that whole outcome grids can
be evaluated at once.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import pdtrc

from .model import EventPattern, Setting


class ConvergenceError(RuntimeError):
    """An inefficiency sum could not reach its tail tolerance under the cap."""


def joint_prob_single(p: float, s1: Setting, s2: Setting) -> float:
    """P(A, B) for one photon in d and none in c at both stations."""
    a1, a2 = s1.alpha, s2.alpha
    R1, R2 = s1.R, s2.R
    T1, T2 = 1.0 - R1, 1.0 - R2
    vac = (1 - p) * R1 * R2 * a1 * a1 * a2 * a2
    one = 0.5 * p * (
        a1 * a1 * R1 * T2
        + T1 * a2 * a2 * R2
        + 2 * a1 * a2 * math.sqrt(R1 * R2 * T1 * T2) * math.cos(s1.phi - s2.phi)
    )
    mix = -a1 * a2 * math.sqrt(2 * p * (1 - p) * R1 * R2) * (
        math.sqrt(T1 * R2) * a2 * math.sin(s1.phi) + math.sqrt(R1 * T2) * a1 * math.sin(s2.phi)
    )
    return math.exp(-a1 * a1 - a2 * a2) * (vac + one + mix)


def local_prob_single(p: float, s: Setting) -> float:
    """P(A): one photon in d and none in c at a single station."""
    a, R = s.alpha, s.R
    T = 1.0 - R
    return 0.5 * math.exp(-a * a) * (
        p * T + a * a * (2 - p) * R
        - 2 * math.sqrt(2) * a * math.sqrt(p * (1 - p) * R * T) * math.sin(s.phi)
    )


def offpair_probs(p: float, s_on: Setting) -> tuple[float, float]:
    """(P(A, B'), P(A', B')) when the primed settings are off."""
    a2 = s_on.alpha ** 2
    return 0.5 * p * s_on.R * a2 * math.exp(-a2), 0.0


def mixed_onoff_joint(p: float, s_on: Setting, pattern: EventPattern) -> float:
    """On station sees ``(n, m)``, the off station sees its single photon."""
    n, m = pattern.n, pattern.m
    a2 = s_on.alpha ** 2
    return (p / (2 * math.factorial(m) * math.factorial(n)) * math.exp(-a2)
            * a2 ** (m + n) * s_on.R ** m * (1 - s_on.R) ** n)


_FACT = np.array([math.factorial(k) for k in range(171)], dtype=float)


def _power_table(base: float, top: int) -> np.ndarray:
    # base**(j/2) for j = -2 .. 2*top + 2, stored at index j + 2.  Entries
    # with negative exponents are zero: in the formulas below they are always
    # multiplied by a photon count that vanishes whenever the power would be
    # singular, so the product is exactly zero.
    j = np.arange(-2, 2 * top + 3)
    out = np.zeros(j.size)
    pos = j >= 0
    out[pos] = np.power(base, j[pos] / 2.0)
    return out


def _station_terms(s: Setting, n, m):
    """Per-station factors ``(v, w, x)`` of the general-pattern formulas.

    ``v = |V|^2`` and ``w = |W|^2`` are the squared amplitudes of the
    vacuum-input and one-photon-input branches, and ``x`` is their real
    cross factor ``|V||W|`` with sign.  The singular prefactors
    ``R^(m-1) T^(n-1) alpha^(2(n+m-1))`` are cancelled term by term.
    """
    if isinstance(n, (int, np.integer)) and isinstance(m, (int, np.integer)):
        return _station_terms_scalar(s, int(n), int(m))
    n = np.asarray(n, dtype=int)
    m = np.asarray(m, dtype=int)
    tot = n + m
    top = int(np.max(tot)) + 1
    A = _power_table(s.alpha, 2 * top)
    R = _power_table(s.R, top)
    T = _power_table(1.0 - s.R, top)
    norm = math.exp(-s.alpha ** 2) / (_FACT[n] * _FACT[m])
    # table lookup of base**(k/2): index k + 2
    v = norm * A[4 * tot + 2] * R[2 * m + 2] * T[2 * n + 2]
    w = norm * A[4 * tot - 2] * (
        m * m * T[2 * n + 4] * R[2 * m]
        - 2 * m * n * T[2 * n + 2] * R[2 * m + 2]
        + n * n * R[2 * m + 4] * T[2 * n]
    )
    x = norm * A[4 * tot] * (
        m * T[2 * n + 3] * R[2 * m + 1]
        - n * R[2 * m + 3] * T[2 * n + 1]
    )
    return v, w, x


def _lossy(s: Setting, eta: float) -> Setting:
    # Uniform detector loss commutes with the beamsplitter, so it acts on the
    # oscillator as alpha -> sqrt(eta) alpha and on the source photon as an
    # erasure with probability 1 - eta.
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"efficiency must lie in (0, 1], got {eta!r}")
    return s if eta == 1.0 else Setting(math.sqrt(eta) * s.alpha, s.phi, s.R)


def _half_pow(base: float, j: int) -> float:
    # base**(j/2), zero for negative j (see _power_table)
    return 0.0 if j < 0 else math.sqrt(base) ** j


def _station_terms_scalar(s: Setting, n: int, m: int):
    a, R = s.alpha, s.R
    T = 1.0 - R
    tot = n + m
    norm = math.exp(-a * a) / (math.factorial(n) * math.factorial(m))
    v = norm * _half_pow(a, 4 * tot) * R ** m * T ** n
    w = norm * _half_pow(a, 4 * tot - 4) * (
        m * m * T ** (n + 1) * _half_pow(R, 2 * m - 2)
        - 2 * m * n * T ** n * R ** m
        + n * n * R ** (m + 1) * _half_pow(T, 2 * n - 2)
    )
    x = norm * _half_pow(a, 4 * tot - 2) * (
        m * _half_pow(T, 2 * n + 1) * _half_pow(R, 2 * m - 1)
        - n * _half_pow(R, 2 * m + 1) * _half_pow(T, 2 * n - 1)
    )
    return v, w, x


def joint_prob_general(p: float, s1: Setting, s2: Setting, n1, m1, n2, m2, eta: float = 1.0):
    """Joint probability of ``(n1, m1)`` at station 1 and ``(n2, m2)`` at station 2.

    Broadcasts over array-valued photon counts.  With ``eta < 1`` every
    detector registers each photon with probability ``eta``; the result equals
    the binomial convolution of :func:`convolve_inefficiency`.
    """
    v1, w1, x1 = _station_terms(_lossy(s1, eta), n1, m1)
    v2, w2, x2 = _station_terms(_lossy(s2, eta), n2, m2)
    q = eta * p
    mix = math.sqrt(2 * q * (1 - p))
    out = (
        (1 - q) * v1 * v2
        + 0.5 * q * v1 * w2
        + 0.5 * q * w1 * v2
        - mix * x1 * v2 * math.sin(s1.phi)
        - mix * v1 * x2 * math.sin(s2.phi)
        + q * x1 * x2 * math.cos(s1.phi - s2.phi)
    )
    return out[()] if isinstance(out, np.ndarray) and out.ndim == 0 else out


def local_prob_general(p: float, s: Setting, n, m, eta: float = 1.0):
    """Probability that one station sees ``(n, m)``, whatever the other sees."""
    v, w, x = _station_terms(_lossy(s, eta), n, m)
    q = eta * p
    out = (
        0.5 * (2 - q) * v
        + 0.5 * q * w
        - math.sqrt(2 * q * (1 - p)) * x * math.sin(s.phi)
    )
    return out[()] if isinstance(out, np.ndarray) and out.ndim == 0 else out


def pair_probs(p: float, s1: Setting, s2: Setting) -> tuple[float, float, float]:
    """(P(A, B), P(A), P(B)) for the photon-pair input and single-photon events."""
    a1, a2 = s1.alpha, s2.alpha
    R1, R2 = s1.R, s2.R
    T1, T2 = 1.0 - R1, 1.0 - R2
    joint = math.exp(-a1 * a1 - a2 * a2) * (
        (1 - p) * R1 * R2 * a1 * a1 * a2 * a2
        + p * T1 * T2
        - 2 * a1 * a2 * math.sqrt(p * (1 - p)) * math.sqrt(R1 * T1 * R2 * T2)
        * math.cos(s1.phi + s2.phi)
    )
    loc1 = math.exp(-a1 * a1) * ((1 - p) * R1 * a1 * a1 + p * T1)
    loc2 = math.exp(-a2 * a2) * ((1 - p) * R2 * a2 * a2 + p * T2)
    return joint, loc1, loc2


def _extra_range(alpha: float, observed: int, max_input: int, tail_tol: float, cap: int) -> int:
    # Largest number of undetected photons per mode worth summing: the station
    # holds Poisson(alpha^2) oscillator photons plus at most max_input photons
    # from the source, so anything beyond `top` total photons is below tail_tol.
    mean = alpha * alpha
    top = max_input
    if mean > 0.0:
        # pdtrc(k, mean) = P(N > k)
        ks = np.arange(observed + cap + 1)
        below = np.flatnonzero(pdtrc(ks, mean) < tail_tol)
        if below.size == 0:
            raise ConvergenceError(
                f"inefficiency sum needs more than {cap} undetected photons for alpha={alpha:g}"
            )
        top += int(below[0])
    extra = max(top - observed, 0)
    if extra > cap:
        raise ConvergenceError(
            f"inefficiency sum needs {extra} undetected photons (cap {cap}) for alpha={alpha:g}"
        )
    return extra


def _thinning_weights(observed: int, extra: int, eta: float) -> np.ndarray:
    # C(k+j, k) eta^k (1-eta)^j for j = 0..extra
    j = np.arange(extra + 1)
    return (_FACT[observed + j] / (_FACT[observed] * _FACT[j])
            * eta ** observed * (1 - eta) ** j)


def convolve_inefficiency(prob_source: Callable, eta: float, target: tuple[int, ...],
                          alphas: tuple[float, ...], max_input: int = 1,
                          tail_tol: float = 1e-12, cap: int = 60) -> float:
    """Detection probability through detectors of efficiency ``eta``.

    ``prob_source`` gives ideal-detector probabilities for array-valued photon
    counts: ``(n, m)`` for a single station or ``(n1, m1, n2, m2)`` for two.
    ``alphas`` holds the oscillator amplitude of each station involved and is
    used to bound the neglected tail.
    """
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"efficiency must lie in (0, 1], got {eta!r}")
    if len(target) != 2 * len(alphas):
        raise ValueError("target needs two counts per station")
    if eta == 1.0:
        return float(prob_source(*target))

    per_station_tol = tail_tol / len(alphas)
    axes, weights = [], []
    for st, alpha in enumerate(alphas):
        k, l = target[2 * st], target[2 * st + 1]
        extra = _extra_range(alpha, k + l, max_input, per_station_tol, cap)
        for obs in (k, l):
            axes.append(obs + np.arange(extra + 1))
            weights.append(_thinning_weights(obs, extra, eta))

    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    probs = np.asarray(prob_source(*grids), dtype=float)
    for wgt in weights:
        probs = np.tensordot(wgt, probs, axes=([0], [0]))
    return float(probs)

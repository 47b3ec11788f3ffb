"""Clauser-Horne values for the homodyne scenario.

The CH expression is

    CH = P(A,B) + P(A,B') + P(A',B) - P(A',B') - P(A) - P(B)

and local realism bounds it to ``[-1, 0]``.  Settings are always ordered
``(A, A', B, B')``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np
from scipy.optimize import brentq

from . import closedform as cf
from .fock import DEFAULT_POLICY, TruncationPolicy, oracle_distribution, _pick
from .model import SINGLE_D, EventPattern, InputSpec, Setting

SETTING_LABELS = ("A", "A'", "B", "B'")
COMPONENT_LABELS = ("P(A,B)", "P(A,B')", "P(A',B)", "P(A',B')", "P(A)", "P(B)")
VARIANTS = ("single_photon_dm", "single_photon_cm", "fixed_nm", "mixed_onoff")


@dataclass(frozen=True)
class EventScheme:
    """Which photon-count event defines a "click" for each setting.

    ``single_photon_dm``: (0, 1) everywhere; ``single_photon_cm``: (1, 0)
    everywhere; ``fixed_nm``: (n, m) everywhere; ``mixed_onoff``: (n, m) for
    on settings and a single photon (0, 1) for off settings.
    """

    variant: str = "single_photon_dm"
    n: int = 0
    m: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown event scheme {self.variant!r}")
        if self.variant == "single_photon_dm":
            object.__setattr__(self, "n", 0)
            object.__setattr__(self, "m", 1)
        elif self.variant == "single_photon_cm":
            object.__setattr__(self, "n", 1)
            object.__setattr__(self, "m", 0)
        EventPattern(self.n, self.m)

    @classmethod
    def fixed(cls, n: int, m: int) -> "EventScheme":
        return cls("fixed_nm", n, m)

    @classmethod
    def mixed(cls, n: int, m: int) -> "EventScheme":
        return cls("mixed_onoff", n, m)

    def event_for(self, setting: Setting) -> EventPattern:
        if self.variant == "mixed_onoff" and setting.is_off():
            return SINGLE_D
        return EventPattern(self.n, self.m)

    @property
    def label(self) -> str:
        if self.variant in ("fixed_nm", "mixed_onoff"):
            return f"{self.variant}({self.n},{self.m})"
        return self.variant


DM = EventScheme("single_photon_dm")
CM = EventScheme("single_photon_cm")


@dataclass(frozen=True)
class CHProblem:
    input: InputSpec
    settings: tuple[Setting, Setting, Setting, Setting]
    scheme: EventScheme = DM
    eta: float = 1.0

    def __post_init__(self):
        if len(self.settings) != 4:
            raise ValueError("a CH problem needs four settings (A, A', B, B')")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"efficiency must lie in (0, 1], got {self.eta!r}")
        if self.scheme.variant == "mixed_onoff":
            a, ap, b, bp = self.settings
            if not (a.is_off() or ap.is_off()) or not (b.is_off() or bp.is_off()):
                raise ValueError("mixed_onoff needs an off setting on each side")


@dataclass
class CHValue:
    value: float
    components: dict[str, float]
    provenance: frozenset[str] = field(default_factory=frozenset)

    def as_dict(self) -> dict:
        return {"value": self.value, "components": dict(self.components),
                "provenance": sorted(self.provenance)}


class _Prober:
    """Probability lookups for one problem, choosing the fastest valid path."""

    def __init__(self, problem: CHProblem, policy: TruncationPolicy):
        self.spec = problem.input
        self.eta = problem.eta
        self.policy = policy
        self.paths: set[str] = set()
        self._oracle_cache: dict = {}

    def _closed_form_ok(self, *events: EventPattern) -> bool:
        fam = self.spec.family
        if fam == "vac1photon":
            return True
        if fam == "photonpair":
            return self.eta == 1.0 and all(e == SINGLE_D for e in events)
        return False

    def _oracle(self, s1: Setting, s2: Setting):
        key = (s1, s2)
        if key not in self._oracle_cache:
            self._oracle_cache[key] = oracle_distribution(self.spec, s1, s2, self.eta, self.policy)
        self.paths.add("oracle")
        return self._oracle_cache[key]

    def joint(self, s1: Setting, e1: EventPattern, s2: Setting, e2: EventPattern) -> float:
        if not self._closed_form_ok(e1, e2):
            return _pick(self._oracle(s1, s2), e1, e2)
        p = self.spec.p
        if self.spec.family == "photonpair":
            self.paths.add("closed-form")
            return cf.pair_probs(p, s1, s2)[0]
        if self.eta < 1.0:
            self.paths.add("closed-form+inefficiency")
            return float(cf.joint_prob_general(p, s1, s2, e1.n, e1.m, e2.n, e2.m, self.eta))
        self.paths.add("closed-form")
        if e1 == SINGLE_D and e2 == SINGLE_D:
            return cf.joint_prob_single(p, s1, s2)
        if s2.is_off() and e2 == SINGLE_D:
            return cf.mixed_onoff_joint(p, s1, e1)
        if s1.is_off() and e1 == SINGLE_D:
            return cf.mixed_onoff_joint(p, s2, e2)
        return float(cf.joint_prob_general(p, s1, s2, e1.n, e1.m, e2.n, e2.m))

    def local(self, s: Setting, e: EventPattern, party: int, other: Setting) -> float:
        if not self._closed_form_ok(e):
            pair = (s, other) if party == 1 else (other, s)
            probs = self._oracle(*pair)
            return _pick(probs, e, None) if party == 1 else _pick(probs, None, e)
        p = self.spec.p
        if self.spec.family == "photonpair":
            self.paths.add("closed-form")
            return cf.pair_probs(p, s, s)[1]
        if self.eta < 1.0:
            self.paths.add("closed-form+inefficiency")
            return float(cf.local_prob_general(p, s, e.n, e.m, self.eta))
        self.paths.add("closed-form")
        if e == SINGLE_D:
            return cf.local_prob_single(p, s)
        return float(cf.local_prob_general(p, s, e.n, e.m))


def ch_value(problem: CHProblem, policy: TruncationPolicy = DEFAULT_POLICY) -> CHValue:
    a, ap, b, bp = problem.settings
    ev = problem.scheme.event_for
    probe = _Prober(problem, policy)
    comps = {
        "P(A,B)": probe.joint(a, ev(a), b, ev(b)),
        "P(A,B')": probe.joint(a, ev(a), bp, ev(bp)),
        "P(A',B)": probe.joint(ap, ev(ap), b, ev(b)),
        "P(A',B')": probe.joint(ap, ev(ap), bp, ev(bp)),
        "P(A)": probe.local(a, ev(a), 1, b),
        "P(B)": probe.local(b, ev(b), 2, a),
    }
    comps = {k: float(v) for k, v in comps.items()}
    value = (comps["P(A,B)"] + comps["P(A,B')"] + comps["P(A',B)"]
             - comps["P(A',B')"] - comps["P(A)"] - comps["P(B)"])
    return CHValue(value, comps, frozenset(probe.paths))


def hardy_intensity(p: float) -> float:
    return p / (2.0 * (1.0 - p))


def hardy_settings(p: float) -> tuple[Setting, Setting, Setting, Setting]:
    """Hardy's on settings for A and B, off settings for A' and B'.

    Balanced beamsplitters and ``alpha**2 = p / (2(1-p))``.  With the
    symmetric source state the oscillator phase that erases the
    "one click, other side empty" terms is pi/2 at both stations.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"Hardy settings need 0 < p < 1, got {p!r}")
    on = Setting(math.sqrt(hardy_intensity(p)), math.pi / 2, 0.5)
    off = Setting.off()
    return (on, off, on, off)


def hardy_vanishing_probs(p: float, policy: TruncationPolicy = DEFAULT_POLICY) -> dict[str, float]:
    """The three probabilities Hardy's construction requires to vanish.

    U_j = 1 is a single photon in d_j at an off station; U_j = 0 is an empty
    d_j there.  F_j = 1 is the on-station single-photon event.
    """
    on, off, _, _ = hardy_settings(p)
    return {
        "P(F1=1,U2=0)": float(cf.joint_prob_general(p, on, off, 0, 1, 0, 0)),
        "P(U1=0,F2=1)": float(cf.joint_prob_general(p, off, on, 0, 0, 0, 1)),
        "P(U1=1,U2=1)": cf.joint_prob_single(p, off, off),
    }


def hardy_ch_closed(p: float) -> float:
    if not (0.0 < p < 1.0):
        raise ValueError(f"Hardy's value needs 0 < p < 1, got {p!r}")
    return math.exp(-p / (1 - p)) * p * p / (16 * (1 - p))


def ch_p1_closed(alpha: float, R: float) -> float:
    """CH at p = 1 for off unprimed and symmetric on primed settings."""
    a2 = alpha * alpha
    return -1.0 + (math.exp(-a2) * a2 - 2.0 * math.exp(-2.0 * a2) * a2 * (1.0 - R)) * R


def p1_stationary_root() -> float:
    """Root of ``exp(x) = 2(1 - 2x)``: the optimal intensity at p = 1."""
    return brentq(lambda x: math.exp(x) - 2.0 * (1.0 - 2.0 * x), 0.0, 0.5, xtol=1e-15)


def p1_violation_boundary() -> float:
    """Root of ``exp(x) = 2(1 - x)``: largest ``x = alpha^2 = R`` still violating at p = 1."""
    return brentq(lambda x: math.exp(x) - 2.0 * (1.0 - x), 0.0, 1.0, xtol=1e-15)


def absolute_form(ch: CHValue | float) -> float:
    """``|CH + 1/2|``; local realism keeps this at or below 1/2."""
    value = ch.value if isinstance(ch, CHValue) else float(ch)
    return abs(value + 0.5)


def relative_ch(ch_max: float, p: float) -> float:
    if p <= 0:
        raise ValueError("relative CH value needs p > 0")
    return ch_max / p


def swap_parties(settings: tuple[Setting, Setting, Setting, Setting]):
    a, ap, b, bp = settings
    return (b, bp, a, ap)


def swap_event_modes(s: Setting) -> Setting:
    """Setting that gives c-mode events the statistics ``s`` gives d-mode events.

    Exchanging R and T swaps the roles of the two outputs; shifting the
    oscillator phase by pi restores the relative sign between the oscillator
    and source branches.  Applying it twice returns the original setting.
    """
    return Setting(s.alpha, s.phi + math.pi, 1.0 - s.R)


def _random_setting(rng) -> Setting:
    # a mix of off settings, boundary reflectivities and generic interior points
    u = rng.uniform()
    if u < 0.1:
        return Setting.off()
    R = rng.choice([0.0, 1.0]) if u < 0.2 else rng.uniform()
    return Setting(rng.uniform(0.0, 2.0), rng.uniform(0.0, 2 * math.pi), float(R))


def _random_pattern(rng, max_total: int = 3) -> EventPattern:
    total = int(rng.integers(0, max_total + 1))
    n = int(rng.integers(0, total + 1))
    return EventPattern(n, total - n)


def oracle_agreement(cases: int = 1000, seed: int = 0,
                     policy: TruncationPolicy = DEFAULT_POLICY) -> dict[str, float]:
    """Largest |closed form - Fock oracle| per formula family over random cases.

    Each case draws ``p``, two settings and two event patterns with at most
    three photons, then checks the single-photon, general-pattern, mixed
    on/off and photon-pair formulas against exact state evolution.
    """
    if cases < 1:
        raise ValueError("need at least one case")
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(("single", "general", "mixed_onoff", "photonpair"), 0.0)
    off = Setting.off()

    def note(key, a, b):
        worst[key] = max(worst[key], abs(float(a) - float(b)))

    for _ in range(cases):
        p = float(rng.uniform())
        s1, s2 = _random_setting(rng), _random_setting(rng)
        e1, e2 = _random_pattern(rng), _random_pattern(rng)
        vac = InputSpec.vac1photon(p)

        P = oracle_distribution(vac, s1, s2, policy=policy)
        note("single", cf.joint_prob_single(p, s1, s2), _pick(P, SINGLE_D, SINGLE_D))
        note("single", cf.local_prob_single(p, s1), _pick(P, SINGLE_D, None))
        note("single", cf.local_prob_single(p, s2), _pick(P, None, SINGLE_D))
        note("general", cf.joint_prob_general(p, s1, s2, e1.n, e1.m, e2.n, e2.m), _pick(P, e1, e2))
        note("general", cf.local_prob_general(p, s1, e1.n, e1.m), _pick(P, e1, None))
        note("general", cf.local_prob_general(p, s2, e2.n, e2.m), _pick(P, None, e2))

        Q = oracle_distribution(vac, s1, off, policy=policy)
        note("mixed_onoff", cf.mixed_onoff_joint(p, s1, e1), _pick(Q, e1, SINGLE_D))
        on_off, off_off = cf.offpair_probs(p, s1)
        note("mixed_onoff", on_off, _pick(Q, SINGLE_D, SINGLE_D))
        note("mixed_onoff", off_off, _pick(oracle_distribution(vac, off, off, policy=policy),
                                             SINGLE_D, SINGLE_D))

        W = oracle_distribution(InputSpec.photonpair(p), s1, s2, policy=policy)
        joint, loc1, loc2 = cf.pair_probs(p, s1, s2)
        note("photonpair", joint, _pick(W, SINGLE_D, SINGLE_D))
        note("photonpair", loc1, _pick(W, SINGLE_D, None))
        note("photonpair", loc2, _pick(W, None, SINGLE_D))
    return worst

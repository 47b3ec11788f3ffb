"""Domain types shared by the probability, Bell and optimisation modules."""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi

FAMILIES = ("vac1photon", "unbalanced", "photonpair")


@dataclass(frozen=True)
class Setting:
    """One party's measurement choice.

    ``alpha`` is the local-oscillator amplitude (``alpha**2`` is its mean
    photon number), ``phi`` its phase and ``R`` the reflectivity of the
    local beamsplitter, ``R = sin(chi)**2``.
    """

    alpha: float
    phi: float = 0.0
    R: float = 0.0

    def __post_init__(self):
        if not (self.alpha >= 0.0) or not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha!r}")
        if not (0.0 <= self.R <= 1.0):
            raise ValueError(f"reflectivity must lie in [0, 1], got {self.R!r}")
        if not math.isfinite(self.phi):
            raise ValueError(f"phase must be finite, got {self.phi!r}")
        object.__setattr__(self, "phi", self.phi % TWO_PI)

    @classmethod
    def off(cls) -> "Setting":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_chi(cls, alpha: float, phi: float, chi: float) -> "Setting":
        return cls(alpha, phi, math.sin(chi) ** 2)

    @property
    def T(self) -> float:
        return 1.0 - self.R

    @property
    def chi(self) -> float:
        # atan2 keeps full precision near R = 1, where asin(sqrt(R)) is ill-conditioned
        return math.atan2(math.sqrt(self.R), math.sqrt(1.0 - self.R))

    @property
    def intensity(self) -> float:
        return self.alpha * self.alpha

    def is_off(self) -> bool:
        # beamsplitter removed and local oscillator switched off
        return self.alpha == 0.0 and self.R == 0.0


@dataclass(frozen=True)
class EventPattern:
    """Photon counts ``n`` in output mode c and ``m`` in output mode d."""

    n: int
    m: int

    def __post_init__(self):
        if int(self.n) != self.n or int(self.m) != self.m or self.n < 0 or self.m < 0:
            raise ValueError(f"photon counts must be non-negative integers, got {(self.n, self.m)}")

    @property
    def total(self) -> int:
        return self.n + self.m

    def as_tuple(self) -> tuple[int, int]:
        return (self.n, self.m)


SINGLE_D = EventPattern(0, 1)
SINGLE_C = EventPattern(1, 0)


@dataclass(frozen=True)
class InputSpec:
    """Two-mode source state feeding the stations (modes b1, b2).

    * ``vac1photon``: sqrt(1-p)|00> + sqrt(p/2)(|01> + |10>)
    * ``unbalanced``: sqrt(1-p)|00> + sqrt(p)(cos(xi)|01> + sin(xi)|10>)
    * ``photonpair``: sqrt(1-p)|00> + sqrt(p)|11>
    """

    family: str = "vac1photon"
    p: float = 1.0
    xi: float = math.pi / 4

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown input family {self.family!r}; expected one of {FAMILIES}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"p must lie in [0, 1], got {self.p!r}")
        if not (0.0 <= self.xi <= math.pi / 2):
            raise ValueError(f"xi must lie in [0, pi/2], got {self.xi!r}")

    @classmethod
    def vac1photon(cls, p: float) -> "InputSpec":
        return cls("vac1photon", p)

    @classmethod
    def unbalanced(cls, p: float, xi: float) -> "InputSpec":
        return cls("unbalanced", p, xi)

    @classmethod
    def photonpair(cls, p: float) -> "InputSpec":
        return cls("photonpair", p)

    def with_p(self, p: float) -> "InputSpec":
        return InputSpec(self.family, p, self.xi)

    @property
    def max_photons(self) -> int:
        """Largest photon number found in either input mode."""
        return 1

    def amplitudes(self) -> dict[tuple[int, int], float]:
        """Non-zero amplitudes keyed by occupation ``(n_b1, n_b2)``."""
        p = self.p
        if self.family == "vac1photon":
            h = math.sqrt(p / 2)
            amps = {(0, 0): math.sqrt(1 - p), (0, 1): h, (1, 0): h}
        elif self.family == "unbalanced":
            s = math.sqrt(p)
            amps = {
                (0, 0): math.sqrt(1 - p),
                (0, 1): s * math.cos(self.xi),
                (1, 0): s * math.sin(self.xi),
            }
        else:
            amps = {(0, 0): math.sqrt(1 - p), (1, 1): math.sqrt(p)}
        return {k: v for k, v in amps.items() if v != 0.0}

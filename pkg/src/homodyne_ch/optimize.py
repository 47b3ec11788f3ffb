"""Searches for extremal CH values over the measurement settings.

Every search is a multi-start Nelder-Mead.  Starting points come from a
scrambled Halton sequence seeded by the caller.  Each start first gets a
short screening run; the best quarter is then polished by restarting the
simplex at its own optimum until a restart stops paying off, and the best
polished point wins.  Results depend only on ``(problem, restarts, seed)``,
never on the worker count.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.stats import qmc

from .bell import (CHProblem, CHValue, CM, DM, EventScheme, SETTING_LABELS, ch_value,
                   swap_event_modes)
from .model import InputSpec, Setting, TWO_PI

CONSTRAINTS = ("free", "symmetric", "onoff_unprimed_off", "onoff_primed_off", "onoff_mixed")
_PINNED_OFF = {
    "free": (),
    "symmetric": (),
    "onoff_unprimed_off": (0, 2),
    "onoff_primed_off": (1, 3),
    "onoff_mixed": (0, 3),
}
SIGNIFICANCE_FLOOR = 1e-9
WORKERS_ENV = "HOMODYNE_CH_WORKERS"
# oscillator amplitudes for random starts are drawn below this value; the
# search itself may go up to alpha_max
START_ALPHA = 1.5
# per-dimension evaluation budgets of one screening run and one polishing round
SCREEN_FEV = 150
POLISH_FRACTION = 0.25
POLISH_FEV = 600


class OptimizationError(RuntimeError):
    """Every restart of a search failed."""


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class OptProblem:
    input: InputSpec
    scheme: EventScheme = DM
    direction: str = "maximize"
    constraint: str = "free"
    symmetric: bool = False
    eta: float = 1.0
    alpha_max: float = 3.0

    def __post_init__(self):
        if self.direction not in ("maximize", "minimize"):
            raise ValueError(f"direction must be maximize or minimize, got {self.direction!r}")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.constraint!r}; expected one of {CONSTRAINTS}")
        if self.constraint == "symmetric":
            object.__setattr__(self, "symmetric", True)
        if self.symmetric and self.constraint == "onoff_mixed":
            raise ValueError("onoff_mixed pins different settings per party; it cannot be symmetric")
        if self.scheme.variant == "mixed_onoff" and not self.pinned_off:
            raise ValueError("mixed_onoff events need an on/off constraint")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"efficiency must lie in (0, 1], got {self.eta!r}")
        if self.alpha_max <= 0:
            raise ValueError("alpha_max must be positive")

    @property
    def pinned_off(self) -> tuple[int, ...]:
        return _PINNED_OFF[self.constraint]

    @property
    def free_slots(self) -> tuple[int, ...]:
        slots = [i for i in range(4) if i not in self.pinned_off]
        if self.symmetric:
            slots = [i for i in slots if i < 2]
        return tuple(slots)

    @property
    def dim(self) -> int:
        return 3 * len(self.free_slots)

    @property
    def sign(self) -> float:
        return -1.0 if self.direction == "maximize" else 1.0

    def with_p(self, p: float) -> "OptProblem":
        return replace(self, input=self.input.with_p(p))

    def decode(self, x: Sequence[float]) -> tuple[Setting, Setting, Setting, Setting]:
        out: list[Setting | None] = [None] * 4
        for k, slot in enumerate(self.free_slots):
            a, phi, r = x[3 * k: 3 * k + 3]
            out[slot] = Setting(min(max(a, 0.0), self.alpha_max), phi, min(max(r, 0.0), 1.0))
        if self.symmetric:
            out[2], out[3] = out[0], out[1]
        for slot in self.pinned_off:
            out[slot] = Setting.off()
        return tuple(out)

    def encode(self, settings: Sequence[Setting]) -> np.ndarray:
        x = []
        for slot in self.free_slots:
            s = settings[slot]
            x += [s.alpha, s.phi, s.R]
        return np.array(x, dtype=float)

    def bounds(self) -> list[tuple[float | None, float | None]]:
        return [(0.0, self.alpha_max), (None, None), (0.0, 1.0)] * len(self.free_slots)

    def ch(self, settings) -> CHValue:
        return ch_value(CHProblem(self.input, tuple(settings), self.scheme, self.eta))

    def objective(self, x: np.ndarray) -> float:
        return self.sign * self.ch(self.decode(x)).value

    def violation(self, value: float) -> float:
        """Amount by which ``value`` exceeds the local-realist bound in this direction."""
        if self.direction == "maximize":
            return max(0.0, value)
        return max(0.0, -1.0 - value)


@dataclass
class OptResult:
    best: CHValue
    settings: tuple[Setting, Setting, Setting, Setting]
    residuals: dict[str, float]
    restarts_used: int
    seed: int
    converged: bool = True
    failures: int = 0
    x: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    violation: float = 0.0

    @property
    def value(self) -> float:
        return self.best.value

    @property
    def reliable(self) -> bool:
        return self.violation >= SIGNIFICANCE_FLOOR

    @property
    def residual_max(self) -> float:
        return max(self.residuals.values(), default=0.0)


def condition_residuals(settings, scheme: EventScheme, eta: float = 1.0,
                        active_alpha: float = 1e-3) -> dict[str, float]:
    """``|R - eta alpha^2|`` (``|T - eta alpha^2|`` for c-mode events) per on setting."""
    res = {}
    for label, s in zip(SETTING_LABELS, settings):
        if s.alpha < active_alpha:
            continue
        split = s.T if scheme.variant == "single_photon_cm" else s.R
        res[label] = abs(split - eta * s.alpha ** 2)
    return res


def _nelder_mead(problem: OptProblem, x: np.ndarray, maxfev: int):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return minimize(problem.objective, x, method="Nelder-Mead", bounds=problem.bounds(),
                        options=dict(xatol=1e-9, fatol=1e-15, maxfev=maxfev,
                                     adaptive=problem.dim > 4))


def _clip(problem: OptProblem, x0) -> np.ndarray:
    bounds = problem.bounds()
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    return np.clip(np.asarray(x0, dtype=float), lo, hi)


def _screen(args):
    problem, x0 = args
    try:
        res = _nelder_mead(problem, _clip(problem, x0), SCREEN_FEV * max(problem.dim, 1))
    except (ValueError, ArithmeticError):
        return None
    return float(res.fun), np.asarray(res.x)


def _polish(args, max_rounds: int = 6):
    # Restart the simplex at its own optimum until a restart stops paying off;
    # "converged" means the last restart moved the value by < 1e-13.
    problem, x = args
    try:
        fx = problem.objective(x)
        converged = False
        for _ in range(max_rounds):
            res = _nelder_mead(problem, x, POLISH_FEV * max(problem.dim, 1))
            gain = fx - float(res.fun)
            if res.fun <= fx:
                x, fx = np.asarray(res.x), float(res.fun)
            if gain < 1e-13:
                converged = True
                break
    except (ValueError, ArithmeticError):
        return None
    return fx, x, converged


def starting_points(problem: OptProblem, restarts: int, seed: int) -> np.ndarray:
    if problem.dim == 0:
        return np.zeros((1, 0))
    unit = qmc.Halton(d=problem.dim, scramble=True, seed=np.random.default_rng(seed)).random(restarts)
    scale_lo, scale_hi = [], []
    for _ in problem.free_slots:
        scale_lo += [0.0, 0.0, 0.0]
        scale_hi += [min(START_ALPHA, problem.alpha_max), TWO_PI, 1.0]
    return qmc.scale(unit, scale_lo, scale_hi)


def _tiebreak_key(problem: OptProblem, x: np.ndarray):
    s = problem.decode(x)
    return (s[0].alpha, s[0].R)


def _onoff_subproblems(problem: OptProblem) -> tuple[list[OptProblem], bool]:
    """On/off variants of a free problem and whether their optima need mirroring.

    An off station never registers a c-mode photon, so for c-mode events the
    variants are solved with d-mode events and mapped back by the event swap.
    """
    if problem.pinned_off:
        return [], False
    mirrored = problem.scheme == CM
    base = replace(problem, scheme=DM) if mirrored else problem
    names = ["onoff_primed_off", "onoff_unprimed_off"]
    if not problem.symmetric:
        names.append("onoff_mixed")
    subs = [replace(base, constraint=c, symmetric=problem.symmetric or c != "onoff_mixed")
            for c in names]
    return subs, mirrored


def optimize_ch(problem: OptProblem, restarts: int = 64, seed: int = 0,
                extra_starts: Sequence[np.ndarray] = (), workers: int | None = None,
                onoff_seeds: bool = True) -> OptResult:
    """Best CH value for ``problem`` over ``restarts`` quasi-random starts.

    ``extra_starts`` are tried in addition (used for warm starts in scans).
    With ``onoff_seeds`` an unconstrained problem first solves its on/off
    variants with the same budget and adds their optima as starts, so the
    result is never worse than any of them.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    workers = default_workers() if workers is None else workers
    starts = list(starting_points(problem, restarts, seed)) + [np.asarray(x) for x in extra_starts]
    if onoff_seeds:
        subs, mirrored = _onoff_subproblems(problem)
        for sub in subs:
            found = optimize_ch(sub, restarts, seed, workers=workers).settings
            if mirrored:
                found = tuple(swap_event_modes(s) for s in found)
            starts.append(problem.encode(found))

    def run(fn, jobs):
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(fn, jobs))
        return [fn(j) for j in jobs]

    screened = run(_screen, [(problem, x0) for x0 in starts])
    ranked = sorted((o for o in screened if o is not None), key=lambda o: o[0])
    keep = max(2, math.ceil(len(starts) * POLISH_FRACTION))
    outcomes = run(_polish, [(problem, x) for _, x in ranked[:keep]])
    good = [o for o in outcomes if o is not None]
    if not good:
        raise OptimizationError(f"all {len(starts)} restarts failed")
    fbest = min(o[0] for o in good)
    ties = [o for o in good if o[0] <= fbest + 1e-12 * max(1.0, abs(fbest))]
    fx, x, _ = min(ties, key=lambda o: _tiebreak_key(problem, o[1]))
    settings = problem.decode(x)
    best = problem.ch(settings)
    return OptResult(
        best=best,
        settings=settings,
        residuals=condition_residuals(settings, problem.scheme, problem.eta),
        restarts_used=len(starts),
        seed=seed,
        converged=bool(min(good, key=lambda o: o[0])[2]),
        failures=len(starts) - len(ranked) + len(outcomes) - len(good),
        x=x,
        violation=problem.violation(best.value),
    )


@dataclass
class ScanPoint:
    p: float
    result: OptResult | None
    error: str | None = None


def _point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def scan_p(template: OptProblem, p_grid: Sequence[float], restarts: int = 32, seed: int = 0,
           workers: int | None = None) -> list[ScanPoint]:
    """Optimise at every grid point, warm-starting from the previous optimum."""
    out: list[ScanPoint] = []
    warm: list[np.ndarray] = []
    for i, p in enumerate(p_grid):
        if not (0.0 <= p <= 1.0):
            out.append(ScanPoint(float(p), None, f"p={p} outside [0, 1]"))
            continue
        try:
            res = optimize_ch(template.with_p(float(p)), restarts, _point_seed(seed, i),
                              extra_starts=warm, workers=workers)
        except (OptimizationError, ValueError, RuntimeError) as exc:
            out.append(ScanPoint(float(p), None, str(exc)))
            continue
        warm = [res.x]
        out.append(ScanPoint(float(p), res))
    return out


def onoff_problem(input: InputSpec, side: str = "upper", eta: float = 1.0,
                  scheme: EventScheme = DM) -> OptProblem:
    """Symmetric on/off search: primed off for the upper bound, unprimed off for the lower."""
    if side not in ("upper", "lower"):
        raise ValueError(f"side must be upper or lower, got {side!r}")
    if side == "upper":
        return OptProblem(input, scheme, "maximize", "onoff_primed_off", True, eta)
    return OptProblem(input, scheme, "minimize", "onoff_unprimed_off", True, eta)


def argmin_p(template: OptProblem, lo: float, hi: float, grid_points: int = 21,
             restarts: int = 8, seed: int = 0, xatol: float = 1e-7) -> tuple[float, float]:
    """Location and value of the most negative CH over ``p`` in ``[lo, hi]``.

    A coarse grid brackets the minimum, then a bounded scalar search refines it.
    """
    def best(p: float) -> float:
        return optimize_ch(template.with_p(p), restarts, seed).value

    grid = np.linspace(lo, hi, grid_points)
    vals = [best(float(p)) for p in grid]
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]
    res = minimize_scalar(best, bounds=(a, b), method="bounded", options={"xatol": xatol})
    if res.fun <= vals[k]:
        return float(res.x), float(res.fun)
    return float(grid[k]), float(vals[k])


@dataclass
class Region:
    p_grid: np.ndarray
    alpha2_grid: np.ndarray
    violated: np.ndarray
    alpha0_sq: np.ndarray
    ch: np.ndarray


def violation_region(p_grid: Sequence[float], alpha2_grid: Sequence[float], side: str = "upper",
                     restarts: int = 8, seed: int = 0, eta: float = 1.0) -> Region:
    """Where CH stays violated when only the oscillator intensity is detuned.

    For each ``p`` the on settings are first optimised; the reflectivity and
    phases are then frozen and ``alpha^2`` is swept jointly at both stations.
    """
    p_grid = np.asarray(p_grid, dtype=float)
    alpha2_grid = np.asarray(alpha2_grid, dtype=float)
    if p_grid.size == 0 or alpha2_grid.size == 0:
        raise ValueError("region grids must be non-empty")
    if np.any(alpha2_grid < 0):
        raise ValueError("intensities must be non-negative")
    violated = np.zeros((p_grid.size, alpha2_grid.size), dtype=bool)
    values = np.zeros_like(violated, dtype=float)
    alpha0 = np.zeros(p_grid.size)
    for i, p in enumerate(p_grid):
        prob = onoff_problem(InputSpec.vac1photon(float(p)), side, eta)
        opt = optimize_ch(prob, restarts, _point_seed(seed, i))
        on = opt.settings[0] if side == "upper" else opt.settings[1]
        alpha0[i] = on.alpha ** 2
        for j, a2 in enumerate(alpha2_grid):
            ch = detuned_ch(prob, opt.settings, float(a2))
            values[i, j] = ch
            violated[i, j] = prob.violation(ch) > SIGNIFICANCE_FLOOR
    return Region(p_grid, alpha2_grid, violated, alpha0, values)


def detuned_ch(problem: OptProblem, settings, alpha2: float) -> float:
    """CH with every on oscillator set to intensity ``alpha2``, all else frozen."""
    moved = tuple(
        s if s.is_off() else Setting(math.sqrt(alpha2), s.phi, s.R) for s in settings
    )
    return problem.ch(moved).value


def zeta(p: float, sigma_rel: float, n_samples: int = 5000, seed: int = 0, side: str = "upper",
         restarts: int = 8, opt: OptResult | None = None) -> float:
    """Mean relative CH change (in %) under Gaussian oscillator-intensity noise.

    Intensities are drawn from a normal centred on the optimum with standard
    deviation ``sigma_rel * alpha0^2``; negative draws are rejected and redrawn.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if sigma_rel < 0:
        raise ValueError("sigma_rel must be >= 0")
    prob = onoff_problem(InputSpec.vac1photon(p), side)
    if opt is None:
        opt = optimize_ch(prob, restarts, seed)
    ch0 = opt.value
    if prob.violation(ch0) < SIGNIFICANCE_FLOOR:
        raise ValueError(f"no significant violation at p={p} on the {side} side (CH={ch0:.3g})")
    on = opt.settings[0] if side == "upper" else opt.settings[1]
    a0 = on.alpha ** 2
    sigma = sigma_rel * a0
    if sigma == 0.0:
        return 0.0

    rng = np.random.default_rng(seed)
    draws = np.empty(0)
    while draws.size < n_samples:
        batch = rng.normal(a0, sigma, size=2 * n_samples)
        draws = np.concatenate([draws, batch[batch >= 0.0]])
    draws = draws[:n_samples]
    dev = [abs(detuned_ch(prob, opt.settings, float(a2)) - ch0) for a2 in draws]
    return 100.0 * float(np.mean(dev)) / abs(ch0)


def alpha0_fit(p):
    """Empirical fit of the optimal oscillator intensity as a function of ``p``."""
    p = np.asarray(p, dtype=float)
    return 1.0 - (1.0 - p ** 0.39634) ** 0.453581


def fit_check_alpha0(p_grid: Sequence[float], results: Sequence[OptResult] | None = None,
                     restarts: int = 8, seed: int = 0) -> float:
    """Largest ``|alpha0^2(optimiser) - alpha0_fit(p)|`` over the grid."""
    p_grid = list(p_grid)
    if results is None:
        template = onoff_problem(InputSpec.vac1photon(0.5), "upper")
        results = [pt.result for pt in scan_p(template, p_grid, restarts, seed)]
    devs = []
    for p, res in zip(p_grid, results):
        if res is None:
            continue
        on = [s for s in res.settings if not s.is_off()]
        a2 = max(s.alpha ** 2 for s in on)
        devs.append(abs(a2 - float(alpha0_fit(p))))
    return max(devs)


@dataclass
class EtaThreshold:
    eta: float
    p: float
    value: float
    settings: tuple
    residuals: dict[str, float]


def best_over_p(eta: float, p_grid: Sequence[float], restarts: int = 8, seed: int = 0,
                refine: bool = True) -> tuple[float, float, OptResult]:
    """Largest upper-side CH over ``p`` (grid, then a bounded refinement) at efficiency ``eta``.

    Each grid point is warm-started from the optimum of its predecessor, and
    the refinement from the best grid point.
    """
    template = onoff_problem(InputSpec.vac1photon(0.5), "upper", eta)
    cache: dict[float, OptResult] = {}

    def run(p: float, warm=()) -> OptResult:
        if p not in cache:
            cache[p] = optimize_ch(template.with_p(p), restarts, seed, extra_starts=warm)
        return cache[p]

    grid = [float(p) for p in p_grid]
    vals, warm = [], ()
    for p in grid:
        res = run(p, warm)
        vals.append(res.value)
        warm = (res.x,)
    k = int(np.argmax(vals))
    p_best = grid[k]
    if refine and len(grid) > 1:
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        seed_x = (cache[p_best].x,)
        res = minimize_scalar(lambda p: -run(float(p), seed_x).value, bounds=(a, b),
                              method="bounded", options={"xatol": 1e-4})
        if -res.fun > vals[k]:
            p_best = float(res.x)
    best = run(p_best)
    return best.value, p_best, best


def eta_threshold(significance: float = 1e-5, p_grid: Sequence[float] | None = None, seed: int = 0,
                  restarts: int = 8, eta_lo: float = 0.75, tol: float = 1e-3) -> EtaThreshold:
    """Smallest efficiency whose best upper-side violation still reaches ``significance``.

    Bisection over ``eta``; at each trial the violation is maximised over the
    on/off settings and over ``p``.
    """
    if p_grid is None:
        p_grid = np.linspace(0.01, 0.12, 12)
    val_hi, p_hi, res_hi = best_over_p(1.0, p_grid, restarts, seed)
    if val_hi < significance:
        raise ValueError(f"no violation above {significance} even at eta = 1")
    lo, hi = eta_lo, 1.0
    if best_over_p(lo, p_grid, restarts, seed, refine=False)[0] >= significance:
        raise ValueError(f"violation still above {significance} at eta = {lo}; lower eta_lo")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        val, p_mid, res = best_over_p(mid, p_grid, restarts, seed)
        if val >= significance:
            hi, val_hi, p_hi, res_hi = mid, val, p_mid, res
        else:
            lo = mid
    return EtaThreshold(hi, p_hi, val_hi, res_hi.settings, res_hi.residuals)

import math

import numpy as np
import pytest

from homodyne_ch.bell import CM, DM, EventScheme
from homodyne_ch.model import InputSpec, Setting
from homodyne_ch.optimize import (WORKERS_ENV, OptProblem, alpha0_fit, best_over_p,
                                  condition_residuals, default_workers, detuned_ch,
                                  fit_check_alpha0, onoff_problem, optimize_ch, scan_p,
                                  starting_points, violation_region, zeta)


def test_problem_validation():
    spec = InputSpec.vac1photon(0.5)
    with pytest.raises(ValueError):
        OptProblem(spec, direction="sideways")
    with pytest.raises(ValueError):
        OptProblem(spec, constraint="loose")
    with pytest.raises(ValueError):
        OptProblem(spec, constraint="onoff_mixed", symmetric=True)
    with pytest.raises(ValueError):
        OptProblem(spec, EventScheme.mixed(0, 2))
    with pytest.raises(ValueError):
        OptProblem(spec, eta=1.2)
    with pytest.raises(ValueError):
        OptProblem(spec, alpha_max=0.0)
    assert OptProblem(spec, constraint="symmetric").symmetric


def test_decode_pins_and_mirrors():
    prob = OptProblem(InputSpec.vac1photon(0.5), constraint="onoff_primed_off", symmetric=True)
    assert prob.dim == 3
    s = prob.decode([0.5, 1.0, 0.3])
    assert s[1].is_off() and s[3].is_off()
    assert s[0] == s[2] == Setting(0.5, 1.0, 0.3)
    assert np.allclose(prob.encode(s), [0.5, 1.0, 0.3])
    # out-of-bounds coordinates are clipped, not rejected
    s = prob.decode([5.0, 1.0, 1.4])
    assert s[0].alpha == prob.alpha_max and s[0].R == 1.0


def test_starting_points_are_seeded_and_in_range():
    prob = OptProblem(InputSpec.vac1photon(0.5))
    a = starting_points(prob, 16, 3)
    assert np.array_equal(a, starting_points(prob, 16, 3))
    assert not np.array_equal(a, starting_points(prob, 16, 4))
    assert a.shape == (16, 12)
    assert np.all(a[:, 0::3] <= 1.5) and np.all(a[:, 2::3] <= 1.0) and np.all(a >= 0)


def test_restarts_must_be_positive():
    with pytest.raises(ValueError):
        optimize_ch(onoff_problem(InputSpec.vac1photon(0.5)), 0)


def test_deterministic_and_worker_independent(monkeypatch):
    prob = onoff_problem(InputSpec.vac1photon(0.4))
    a = optimize_ch(prob, 4, 5)
    b = optimize_ch(prob, 4, 5)
    c = optimize_ch(prob, 4, 5, workers=2)
    assert a.value == b.value == c.value
    assert np.array_equal(a.x, b.x) and np.array_equal(a.x, c.x)
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert default_workers() == 3
    monkeypatch.setenv(WORKERS_ENV, "many")
    assert default_workers() == 1


@pytest.mark.parametrize("direction", ["maximize", "minimize"])
def test_no_violation_without_a_photon(direction):
    res = optimize_ch(OptProblem(InputSpec.vac1photon(0.0), direction=direction), 4, 0)
    assert res.violation < 1e-9
    assert not res.reliable


def test_onoff_emerges_from_unseeded_free_search():
    res = optimize_ch(OptProblem(InputSpec.vac1photon(0.5)), 16, 0, onoff_seeds=False)
    assert res.value > 0.0123
    primed = [res.settings[1], res.settings[3]]
    assert all(s.alpha < 1e-3 and s.R < 1e-3 for s in primed)
    on = [res.settings[0], res.settings[2]]
    assert all(abs(s.R - s.alpha ** 2) < 0.01 for s in on)


@pytest.mark.parametrize("spec", [InputSpec.vac1photon(0.3), InputSpec.photonpair(0.8)])
def test_free_search_dominates_constrained(spec):
    free = optimize_ch(OptProblem(spec), 8, 1).value
    for c in ("onoff_primed_off", "onoff_unprimed_off", "onoff_mixed", "symmetric"):
        constrained = optimize_ch(OptProblem(spec, constraint=c), 8, 1).value
        assert free >= constrained - 1e-12


def test_condition_residuals_use_the_detected_port():
    s = (Setting(0.5, 0.0, 0.25), Setting.off(), Setting(0.5, 0.0, 0.75), Setting(1e-4, 0.0, 0.3))
    dm = condition_residuals(s, DM)
    assert set(dm) == {"A", "B"}
    assert dm["A"] == 0.0 and dm["B"] == pytest.approx(0.5)
    cm = condition_residuals(s, CM)
    assert cm["B"] == 0.0
    assert condition_residuals(s, DM, eta=0.5)["A"] == pytest.approx(0.125)


def test_scan_records_failures_and_warm_starts():
    template = onoff_problem(InputSpec.vac1photon(0.5))
    pts = scan_p(template, [0.2, 1.5, 0.4], restarts=4, seed=2)
    assert [pt.p for pt in pts] == [0.2, 1.5, 0.4]
    assert pts[1].result is None and "outside" in pts[1].error
    assert pts[0].result.value > 0 and pts[2].result.value > pts[0].result.value


def test_violation_region():
    reg = violation_region([0.5], [0.0, 0.2, 0.476, 2.5], "upper", restarts=8)
    assert not reg.violated[0, 0]
    assert reg.violated[0, 2]
    assert reg.alpha0_sq[0] == pytest.approx(0.476, abs=0.01)
    low = violation_region([1.0], [0.0, 0.1959, 0.6], "lower", restarts=8)
    assert low.violated[0].tolist() == [False, True, False]
    with pytest.raises(ValueError):
        violation_region([], [0.1])


def test_detuned_ch_keeps_off_settings():
    prob = onoff_problem(InputSpec.vac1photon(0.5))
    on = Setting(0.6, math.pi / 2, 0.36)
    s = (on, Setting.off(), on, Setting.off())
    assert detuned_ch(prob, s, 0.36) == pytest.approx(prob.ch(s).value)


def test_zeta_properties():
    opt = optimize_ch(onoff_problem(InputSpec.vac1photon(0.5)), 8, 0)
    assert zeta(0.5, 0.0, opt=opt) == 0.0
    z5 = zeta(0.5, 0.05, 2000, seed=1, opt=opt)
    z10 = zeta(0.5, 0.10, 2000, seed=1, opt=opt)
    assert 0 < z5 < z10
    low = zeta(1.0, 0.05, 2000, seed=1, side="lower")
    assert low < 0.1 * z5
    with pytest.raises(ValueError):
        zeta(0.985, 0.05, 10, side="lower")
    with pytest.raises(ValueError):
        zeta(0.5, -0.1, 10, opt=opt)


def test_alpha0_fit():
    assert float(alpha0_fit(0.5)) == pytest.approx(0.476, abs=5e-4)
    assert float(alpha0_fit(1.0)) == 1.0
    assert fit_check_alpha0([0.3, 0.6], restarts=4) < 0.05


def test_best_over_p_at_unit_efficiency():
    val, p, res = best_over_p(1.0, [0.3, 0.5], restarts=4, refine=False)
    assert p == 0.5
    assert val == pytest.approx(optimize_ch(onoff_problem(InputSpec.vac1photon(0.5)), 8, 0).value,
                                abs=1e-9)

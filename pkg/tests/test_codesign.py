import math

import numpy as np
import pytest

from sporadic.analysis import verify_certificate
from sporadic.codesign import (
    CodesignOptions,
    Infeasible,
    _hopeless,
    cc_minimize_trace,
    delta_lower_bound,
    design,
    posterior_check,
    relaxed_feasible,
)
from sporadic.model import PlantModel, assemble_closed_loop

STABLE = PlantModel([[-1.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]])
UNSTABLE = PlantModel([[1.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]])
UNSTABILIZABLE = PlantModel([[1.0]], [[0.0]], [[1.0]], [[1.0]], [[1.0]])


@pytest.fixture(scope="module")
def opts():
    return CodesignOptions(gamma=10.0, T2=0.5, T1=0.1)


# -- posterior check -----------------------------------------------------


def test_posterior_check_simple():
    ok, lam = posterior_check(np.eye(2) / 2, np.eye(2))
    assert ok and lam == pytest.approx(-0.5)
    ok, lam = posterior_check(2 * np.eye(2), np.eye(2))
    assert not ok and lam == pytest.approx(1.0)


def test_posterior_check_singular_F():
    ok, lam = posterior_check(np.eye(2), np.diag([1.0, 0.0]))
    assert not ok and math.isnan(lam)


# -- options -------------------------------------------------------------


@pytest.mark.parametrize("bad", [
    dict(gamma=0.0), dict(T2=-1.0), dict(T1=2.0), dict(r=1.0), dict(cc_max_iter=0),
    dict(cc_init="random"), dict(verify_slack=-1.0), dict(pole_damping=1.5),
])
def test_options_validation(bad):
    kw = dict(gamma=10.0, T2=1.0) | bad
    with pytest.raises(ValueError):
        CodesignOptions(**kw)


def test_hopeless_rule():
    o = CodesignOptions(gamma=1.0, T2=1.0, cc_projection_min_iter=3)
    assert not _hopeless([9.0, 8.0], 6.0, 10, o)  # too few iterations to judge
    assert not _hopeless([9.0, 8.0, 7.0], 6.0, 10, o)
    assert _hopeless([9.0, 8.0, 7.99], 6.0, 10, o)  # 199 steps needed, 2 * 10 allowed
    assert _hopeless([9.0, 8.0, 8.0], 6.0, 10, o)
    assert not _hopeless([9.0, 8.0, 7.99], 6.0, 10, o.replace(cc_projection_factor=None))


# -- infeasible plants ---------------------------------------------------


def test_unstabilizable_plant_is_infeasible(opts):
    lb = delta_lower_bound(UNSTABILIZABLE, opts)
    assert isinstance(lb, Infeasible) and not lb and not lb.numerical
    assert not cc_minimize_trace(UNSTABILIZABLE, 5.0, opts)
    res = design(UNSTABILIZABLE, opts)
    assert isinstance(res, Infeasible)
    assert res.log and res.log[0].phase == "bisection"


# -- delta bisection -----------------------------------------------------


@pytest.mark.parametrize("plant", [STABLE, UNSTABLE])
def test_delta_lower_bound_brackets(plant, opts):
    delta, records = delta_lower_bound(plant, opts)
    assert 0 < delta <= opts.delta_bar
    assert relaxed_feasible(plant, delta, opts).ok
    feas = [r.delta for r in records if r.status == "optimal"]
    infeas = [r.delta for r in records if r.status != "optimal"]
    # feasibility is monotone: every feasible point lies above every infeasible one
    assert not infeas or min(feas) > max(infeas)
    assert min(feas) == delta


# -- cone complementarity ------------------------------------------------


@pytest.fixture(scope="module")
def slow_cc(opts):
    # at a small delta the unstable plant needs many linearization steps
    return cc_minimize_trace(UNSTABLE, 0.0781, opts.replace(cc_projection_factor=None, cc_max_iter=15))


def test_cc_trace_bounded_below(slow_cc):
    assert slow_cc.iterations == 15
    assert all(t >= 2 - 1e-6 for t in slow_cc.traces)


def test_cc_objective_nonincreasing(slow_cc):
    obj = np.array(slow_cc.objectives)
    assert np.all(np.diff(obj) <= 1e-6 * np.abs(obj[:-1]))


def test_cc_converges_on_stable_plant(opts):
    res = cc_minimize_trace(STABLE, 0.0781, opts)
    assert res.converged
    assert res.trace == pytest.approx(2.0, abs=2e-4)
    assert res.identity_residual < 1e-3


def test_cc_identity_start(opts):
    res = cc_minimize_trace(STABLE, 0.0781, opts.replace(cc_init="identity"))
    assert res.traces[0] >= 2 - 1e-6
    assert res.log[0].iteration == 1  # no feasibility solve first


# -- full design ---------------------------------------------------------


@pytest.fixture(scope="module")
def small_design(opts):
    seen = []
    res = design(STABLE, opts, progress=seen.append)
    return res, seen


def test_small_design_is_certified(small_design, opts):
    res, _ = small_design
    assert res
    assert res.report.passed
    assert posterior_check(res.variables.R, res.variables.F)[0]
    assert res.trace == pytest.approx(2.0, abs=2e-4)
    assert res.delta_lower <= res.delta <= opts.delta_bar
    cl = assemble_closed_loop(STABLE, res.controller, res.holder)
    assert verify_certificate(res.certificate, cl, slack=1e-7).passed


def test_small_design_log(small_design):
    res, seen = small_design
    assert seen == res.log
    phases = [r.phase for r in res.log]
    assert phases[0] == "bisection" and phases[-1] == "verify"
    assert "posterior" in phases
    for r in res.log:
        assert set(r.to_dict()) == {"phase", "delta", "iteration", "status", "trace", "objective", "note"}


def test_small_design_json(small_design):
    d = small_design[0].to_json_dict()
    assert {"plant", "controller", "holder", "certificate", "delta", "delta_lower", "trace",
            "verification", "log"} <= set(d)
    assert d["verification"]["passed"] is True

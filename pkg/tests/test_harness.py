import dataclasses
import json
import math

import numpy as np
import pytest

from sepdyn.harness import (ExperimentError, ExperimentSpec, GridConfig, Harness, InitialState,
                            IntegratorSettings, LinearLimitConfig, PotentialConfig, Report,
                            SubsystemConfig, TermConfig, VariantConfig, Verdict,
                            build_initial_state, reference_experiment, run_experiment,
                            run_no_signaling, two_block_partitions, variant_subsystems)
from sepdyn.states import WaveFunction, diagnostics, partial_trace

SMALL = dict(grid=GridConfig(8, 8.0), integrator=IntegratorSettings(dt=2e-3, t_final=0.04, observer_stride=4))


def small(kind, kernel="haag_bannier", **kw):
    return reference_experiment(kind, kernel, **{**SMALL, **kw})


@pytest.mark.parametrize("relation,threshold,value,ok", [
    ("<=", 1.0, 1.0, True), ("<=", 1.0, 1.1, False), (">=", 2.0, 3.0, True),
    (">=", 2.0, math.inf, True), ("<=", 1.0, math.nan, False), ("in", (1, 2), 1.5, True),
    ("in", (1, 2), 2.5, False), ("<=", math.inf, math.inf, False)])
def test_verdict_relations(relation, threshold, value, ok):
    assert Verdict("v", value, threshold, relation).passed is ok


def test_report_lookup_and_serialization():
    rep = Report("r", "no_signaling")
    rep.verdicts.append(Verdict("a", 0.5, (0, 1), "in"))
    rep.add_series("s", [0, 1], [2, 3])
    assert rep.passed and rep.verdict("a").value == 0.5
    with pytest.raises(KeyError):
        rep.verdict("b")
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["verdicts"][0]["threshold"] == [0, 1] and d["series"] == ["s"]


def test_reference_initial_state_is_entangled_and_normalized():
    spec = reference_experiment("complete_separability")
    rho = build_initial_state(spec)
    d = diagnostics(rho)
    assert d.trace_error < 1e-12 and d.purity == pytest.approx(1.0)
    red = diagnostics(partial_trace(rho, [0]))
    # two equal Schmidt weights
    assert red.purity == pytest.approx(0.5, abs=1e-10)
    prod = dataclasses.replace(spec, initial=spec.initial.product_counterpart())
    assert diagnostics(partial_trace(build_initial_state(prod), [0])).purity == pytest.approx(1.0)


def test_plane_wave_mixture_and_representations():
    spec = small("complete_separability", "twarock")
    psi = build_initial_state(spec, "wavefunction")
    assert isinstance(psi, WaveFunction) and psi.norm == pytest.approx(1.0)
    assert diagnostics(partial_trace(build_initial_state(spec), [1])).purity < 1


def test_random_mixed_is_seeded():
    base = dataclasses.replace(small("complete_separability"),
                               initial=InitialState(recipe="random_mixed", rank=3, seed=5))
    a, b = build_initial_state(base), build_initial_state(base)
    assert np.array_equal(a.matrix, b.matrix)
    c = build_initial_state(dataclasses.replace(base, initial=InitialState(recipe="random_mixed", seed=6)))
    assert not np.allclose(a.matrix, c.matrix)
    with pytest.raises(ExperimentError):
        build_initial_state(base, "wavefunction")


def test_custom_amplitudes():
    amps = np.zeros(2 * 64)
    amps[0::2] = 1.0 / 8.0  # constant real amplitude, norm 1 on the measure dx dy = 1
    spec = dataclasses.replace(small("complete_separability"),
                               initial=InitialState(recipe="custom", amplitudes=tuple(amps)))
    assert build_initial_state(spec).trace == pytest.approx(1.0)
    bad = dataclasses.replace(spec, initial=InitialState(recipe="custom", amplitudes=(1.0, 0.0)))
    with pytest.raises(ExperimentError):
        build_initial_state(bad)
    with pytest.raises(ExperimentError):
        InitialState(recipe="custom").product_counterpart()


@pytest.mark.parametrize("change,match", [
    (dict(kind="bogus"), "unknown experiment kind"),
    (dict(particles=3), "subsystem configs"),
    (dict(observed=2), "observed subsystem"),
    (dict(variants=(VariantConfig(0),)), "remote"),
    (dict(variants=(VariantConfig(5),)), "missing subsystem"),
    (dict(integrator=IntegratorSettings(observer_stride=10)), "divisible"),
    (dict(metric="l1"), "metric"),
    (dict(representation="phase"), "representation"),
    (dict(grid=GridConfig(2, 8.0)), "grid"),
    (dict(subsystems=(SubsystemConfig((TermConfig("magic", 1.0),)), SubsystemConfig())),
     "unknown nonlinear term"),
    (dict(subsystems=(SubsystemConfig((TermConfig("doebner_goldin", coefficients=(1.0,)),)),
                      SubsystemConfig())), "five|5 coefficients"),
    (dict(subsystems=(SubsystemConfig(potential=PotentialConfig(kind="box")), SubsystemConfig())),
     "potential kind"),
    (dict(subsystems=(SubsystemConfig(mass=-1.0), SubsystemConfig())), "mass"),
])
def test_validation_errors(change, match):
    spec = dataclasses.replace(reference_experiment("no_signaling"), **change)
    with pytest.raises(ExperimentError, match=match):
        spec.validate()


def test_validation_of_special_kinds():
    lin = ExperimentSpec("l", "linear_limit", particles=1,
                         subsystems=(SubsystemConfig((TermConfig("nls", 1.0),)),))
    with pytest.raises(ExperimentError, match="zero nonlinear"):
        lin.validate()
    three = (SubsystemConfig(),) * 3
    stage = ExperimentSpec("s", "stage_consistency", particles=3, subsystems=three,
                           initial=InitialState(recipe="random_mixed"), grid=GridConfig(4, 4.0),
                           groupings=(((0,), (1,)),))
    with pytest.raises(ExperimentError, match="partition"):
        stage.validate()
    with pytest.raises(ExperimentError, match="at least 2"):
        ExperimentSpec("c", "complete_separability", particles=1,
                       subsystems=(SubsystemConfig(),)).validate()


def test_variant_subsystems_and_partitions():
    spec = reference_experiment("no_signaling")
    subs = variant_subsystems(spec)
    assert len(subs) == 4 and all(s[0] == spec.subsystems[0] for s in subs)
    assert len({s[1] for s in subs}) == 4
    assert two_block_partitions(3) == [((0,), (1, 2)), ((0, 1), (2,)), ((0, 2), (1,))]
    assert len(two_block_partitions(4)) == 7


def test_harness_caches_runs():
    h = Harness()
    spec = small("no_signaling")
    a = h.evolve(spec, spec.subsystems, dt=2e-3, stride=4)
    b = h.evolve(spec, spec.subsystems, dt=2e-3, stride=4)
    assert a is b
    c = h.evolve(spec, spec.subsystems, dt=2e-3, stride=4, representation="wavefunction")
    assert c is not a
    # pure and density representations observe the same reduced state
    for x, y in zip(a.reduced, c.reduced):
        assert np.max(np.abs(x - y)) < 1e-10


def test_threaded_harness_matches_serial():
    spec = small("no_signaling")
    one = run_no_signaling(spec, Harness(1), threshold=1e-12)
    two = run_no_signaling(spec, Harness(2), threshold=1e-12)
    assert one.verdict("signaling").value == two.verdict("signaling").value


def test_small_separability_run():
    rep = run_experiment(small("complete_separability"))
    assert rep.verdict("initial_residual").value == 0
    # same-step comparison is exact up to roundoff
    assert rep.verdict("same_step_residual").value < 1e-13
    assert rep.values["threshold"] > 0
    assert "residual" in rep.series and rep.metadata["runtime_seconds"] > 0


def test_small_no_signaling_is_roundoff():
    rep = run_no_signaling(small("no_signaling"), threshold=1e-12)
    assert rep.values["variants"] == 4
    assert rep.verdict("signaling").value < 1e-13
    assert rep.passed


def test_small_naive_contrast_separates():
    rep = run_experiment(small("naive_contrast", thresholds=dataclasses.replace(
        reference_experiment("naive_contrast").thresholds, separability=1e-10)))
    # on wave functions the truncated RK4 propagator does not factorize, so the
    # separable recipe leaks at the integrator-error level only
    assert rep.values["correct_metric"] < 1e-10
    assert rep.values["naive_metric"] > 1e3 * rep.values["correct_metric"]
    assert rep.verdict("product_mode_agreement").value < 1e-10


def test_small_linear_limit_density():
    spec = ExperimentSpec("lin", "linear_limit", grid=GridConfig(48, 20.0), particles=1,
                          linear=LinearLimitConfig(representation="density"),
                          integrator=IntegratorSettings(dt=1e-2, t_final=0.2, observer_stride=4))
    rep = run_experiment(spec)
    assert rep.passed
    assert rep.verdict("free_variance_relative_error").value < 1e-6


def test_small_pure_mixed():
    rep = run_experiment(small("pure_mixed_consistency"))
    assert rep.verdict("final_distance").value < 1e-10


def test_run_experiment_unknown_kind():
    with pytest.raises(ExperimentError):
        run_experiment(dataclasses.replace(small("no_signaling"), kind="other"))

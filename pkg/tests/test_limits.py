"""Limit studies: slope fits, blended test functions, residual audits, sweeps."""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipflow import limits
from slipflow.config_io import parse_config, read_snapshot
from slipflow.errors import (DomainError, IncompatiblePair,
                             InvariantViolation, UnsupportedShape)
from slipflow.geometry import BodyShape, Domain
from slipflow.limits import (SmoothTest, build_test_function, correction_norm,
                             divergence_residual, example_test_pair,
                             fit_loglog, galerkin_residual, penalization_metrics,
                             richardson_limit, run_sweep, select_tail,
                             weak_residual)
from slipflow.rigid_body import RigidPose

DELTAS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


@pytest.fixture(scope="module")
def disc_setup():
    shape = BodyShape.disc(0.2)
    pose = RigidPose(np.array([0.5, 0.5]), np.eye(2))
    domain = Domain((1.0, 1.0))
    return shape, pose, domain


@pytest.fixture(scope="module")
def rotation_tf(disc_setup):
    shape, pose, domain = disc_setup
    pair = example_test_pair("rotation", shape, pose, domain)
    return build_test_function(pair.phi_F, pair.phi_S, shape, pose,
                               delta=0.1, vartheta=1.5,
                               grad_F=pair.grad_F, grad_S=pair.grad_S)


@pytest.fixture(scope="module")
def nsweep(small_config, tmp_path_factory):
    base = dataclasses.replace(small_config, N=4)
    out = tmp_path_factory.mktemp("nsweep")
    report = run_sweep(base, "N", (4, 8, 16), out)
    return base, out, report


# -- slope fitting ------------------------------------------------------------


def test_fit_recovers_exact_power_law():
    x = np.array(DELTAS)
    fit = fit_loglog(x, 3.7 * x ** 0.5)
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.r2 >= 1.0 - 1e-12
    assert fit.tail == (0, 1, 2, 3, 4)


@settings(max_examples=50, deadline=None)
@given(s=st.floats(-2.0, 2.0), scale=st.floats(1e-6, 1e6))
def test_fit_slope_is_scale_invariant(s, scale):
    x = np.array(DELTAS)
    y = 2.3 * x ** s + 0.1 * x ** (s + 1.0)     # mild curvature
    base = fit_loglog(x, y).slope
    scaled = fit_loglog(x, scale * y).slope
    assert scaled == pytest.approx(base, abs=1e-12)


def test_fit_rejects_nonpositive_data():
    with pytest.raises(DomainError, match="positive"):
        fit_loglog([1.0, 0.1], [1.0, -1.0])


def test_tail_selection_drops_contaminated_head():
    x = np.array(DELTAS)
    y = x ** 0.5
    assert select_tail(x, y) == (0, 1, 2, 3, 4)
    y_bad = y.copy()
    y_bad[0] *= 5.0
    assert select_tail(x, y_bad) == (1, 2, 3, 4)


def test_richardson_recovers_exact_model():
    x = np.array([1e-1, 3e-2, 1e-2])
    y = 2.0 + 3.0 * x ** 0.8
    lim, err, q = richardson_limit(x, y)
    assert lim == pytest.approx(2.0, abs=1e-9)
    assert q == pytest.approx(0.8, abs=1e-6)
    assert err == pytest.approx(abs(lim - y[-1]), rel=1e-12)


def test_richardson_fallback_on_nonmonotone_data():
    x = [1e-1, 3e-2, 1e-2]
    y = [1.0, 2.0, 1.5]
    lim, err, q = richardson_limit(x, y)
    assert lim == 1.5
    assert err == 0.5
    assert math.isnan(q)
    with pytest.raises(DomainError, match="three"):
        richardson_limit([1.0, 0.1], [1.0, 1.1])


# -- blended test functions ----------------------------------------------------


def test_canonical_pairs_have_matching_normal_traces(rotation_tf):
    assert rotation_tf.vt_mismatch <= 1e-12


def test_incompatible_pair_is_rejected(disc_setup):
    shape, pose, domain = disc_setup
    pair = example_test_pair("incompatible", shape, pose, domain)
    with pytest.raises(IncompatiblePair, match="disagree by 6.500e-01"):
        build_test_function(pair.phi_F, pair.phi_S, shape, pose,
                            delta=0.1, vartheta=1.5)


def test_pair_jacobians_match_finite_differences(disc_setup):
    shape, pose, domain = disc_setup
    h = 1e-6
    theta = np.linspace(0.0, 2.0 * np.pi, 17)[:-1]
    pts = pose.center + 0.35 * np.column_stack([np.cos(theta), np.sin(theta)])
    for kind in ("rotation", "translation"):
        pair = example_test_pair(kind, shape, pose, domain)
        for func, jac in ((pair.phi_F, pair.grad_F), (pair.phi_S, pair.grad_S)):
            J = np.asarray(jac(pts), dtype=float)
            for b in range(2):
                e = np.zeros(2)
                e[b] = h
                fd = (np.asarray(func(pts + e)) - np.asarray(func(pts - e))) / (2 * h)
                assert np.max(np.abs(J[:, :, b] - fd)) <= 1e-8


def test_blend_is_exact_on_surface_and_past_layer(rotation_tf, disc_setup):
    shape, pose, _ = disc_setup
    theta = np.linspace(0.0, 2.0 * np.pi, 64)[:-1]
    ring = np.column_stack([np.cos(theta), np.sin(theta)])
    on_surface = pose.center + 0.2 * ring
    mismatch = rotation_tf.solid_value(on_surface) \
        - np.asarray(rotation_tf.phi_F(on_surface))
    assert np.max(np.abs(mismatch)) <= 1e-12

    deep = pose.center + 0.1 * ring       # depth 0.1 > layer = 0.1^1.5
    assert rotation_tf.layer < 0.1
    assert np.max(np.abs(rotation_tf.correction(deep))) == 0.0
    outside = pose.center + 0.3 * ring
    assert np.max(np.abs(rotation_tf.value(outside)
                         - np.asarray(rotation_tf.phi_F(outside)))) == 0.0


def test_divergence_repair_closes(rotation_tf):
    assert divergence_residual(rotation_tf) <= 1e-8


def test_vartheta_window_enforced(disc_setup):
    shape, pose, domain = disc_setup
    pair = example_test_pair("rotation", shape, pose, domain)
    for bad in (1.0, 2.0, 2.5):
        with pytest.raises(InvariantViolation, match="vartheta"):
            build_test_function(pair.phi_F, pair.phi_S, shape, pose,
                                delta=0.1, vartheta=bad)


def test_repair_needs_round_body(disc_setup):
    _, pose, domain = disc_setup
    ellipse = BodyShape.ellipse(0.2, 0.1)
    with pytest.raises(UnsupportedShape):
        example_test_pair("rotation", ellipse, pose, domain)


def test_correction_norm_rates(disc_setup):
    shape, pose, domain = disc_setup
    pair = example_test_pair("rotation", shape, pose, domain)
    deltas = (1e-1, 1e-2, 1e-3)
    norms = {p: [] for p in (2.0, 6.0)}
    for d in deltas:
        tf = build_test_function(pair.phi_F, pair.phi_S, shape, pose,
                                 delta=d, vartheta=1.5,
                                 grad_F=pair.grad_F, grad_S=pair.grad_S)
        for p in norms:
            norms[p].append(correction_norm(tf, p))
    # layer width delta^vartheta gives L^p decay of order vartheta/p
    slope2 = fit_loglog(deltas, norms[2.0]).slope
    slope6 = fit_loglog(deltas, norms[6.0]).slope
    assert slope2 == pytest.approx(0.7457, abs=5e-3)
    assert slope6 == pytest.approx(0.2496, abs=5e-3)
    assert slope2 >= 0.9 * 1.5 / 2.0
    assert slope6 >= 0.9 * 1.5 / 6.0


# -- residual audits -----------------------------------------------------------


def test_committed_step_solves_full_galerkin_system(nsweep):
    base, out, _ = nsweep
    cfg = dataclasses.replace(base, N=8)
    snap = read_snapshot(out / "N_8" / "snapshot_final.csv")
    resid, scale = galerkin_residual(snap, cfg)
    assert resid <= 10.0 * 1e-12 * scale


def test_in_span_weak_residual_vanishes(nsweep):
    base, out, _ = nsweep
    cfg = dataclasses.replace(base, N=8)
    snap = read_snapshot(out / "N_8" / "snapshot_final.csv")
    rng = np.random.default_rng(5)
    v = rng.standard_normal(snap.n_modes)
    v /= np.linalg.norm(v)
    assert abs(weak_residual(snap, cfg, v)) <= 1e-12


def test_smooth_test_residual_decays_under_mode_doubling(nsweep):
    base, out, _ = nsweep
    swirl_v, swirl_g = limits._azimuthal(np.array([0.5, 0.5]), 0.4, 0.28, 0.475)
    test = SmoothTest(swirl_v, swirl_g)
    expected = {4: 3.648395e-4, 8: 9.112857e-5, 16: 3.289880e-6}
    resid = []
    for N in (4, 8, 16):
        cfg = dataclasses.replace(base, N=N)
        snap = read_snapshot(out / f"N_{N}" / "snapshot_final.csv")
        r = abs(weak_residual(snap, cfg, test))
        assert r == pytest.approx(expected[N], rel=1e-4)
        resid.append(r)
    assert resid[0] > resid[1] > resid[2]


def test_smooth_test_fd_gradient_fallback():
    swirl_v, swirl_g = limits._azimuthal(np.array([0.5, 0.5]), 0.4, 0.28, 0.475)
    pts = np.array([[0.55, 0.85], [0.2, 0.45]])
    fd = SmoothTest(swirl_v).gradient(pts)
    exact = SmoothTest(swirl_v, swirl_g).gradient(pts)
    assert np.max(np.abs(fd - exact)) <= 1e-8


# -- run metrics and sweeps ------------------------------------------------------


def test_penalization_metrics_read_back(nsweep):
    base, out, _ = nsweep
    rd = out / "N_4"
    m = penalization_metrics(rd)
    lines = [l for l in (rd / "energy.csv").read_text().splitlines()
             if l and not l.startswith("#")]
    header = lines[0].split(",")
    col = header.index("D_penal")
    d_penal = np.array([float(l.split(",")[col]) for l in lines[1:]])[1:]
    r2 = float(np.sum(base.dt * base.delta * d_penal))
    assert m.r_delta == pytest.approx(math.sqrt(r2), rel=1e-12)
    assert m.penal_budget == pytest.approx(r2 / base.delta, rel=1e-12)
    assert np.isfinite(m.slip_jump) and m.slip_jump > 0.0


def test_slip_jump_needs_snapshots(nsweep, tmp_path):
    _, out, _ = nsweep
    for name in ("config.txt", "energy.csv"):
        (tmp_path / name).write_bytes((out / "N_4" / name).read_bytes())
    m = penalization_metrics(tmp_path)
    assert math.isnan(m.slip_jump)
    assert m.r_delta > 0.0


def test_nsweep_kinetic_energy_is_cauchy(nsweep):
    _, _, report = nsweep
    assert report.errors == {}
    cauchy = [c for c in report.metrics["kinetic_cauchy"] if not math.isnan(c)]
    assert len(cauchy) == 2
    assert cauchy[0] > cauchy[1] > 0.0


def test_epsilon_sweep_density_differences_are_first_order(small_config,
                                                           tmp_path):
    base = dataclasses.replace(small_config, t_end=0.01)
    report = run_sweep(base, "epsilon", (3e-3, 1e-3, 3e-4), tmp_path)
    assert report.errors == {}
    fit = report.slopes["density_l1"]
    assert fit.slope == pytest.approx(0.9507, abs=5e-3)
    assert fit.slope >= 0.8


def test_sweep_records_failed_members(small_config, tmp_path):
    base = dataclasses.replace(small_config, t_end=0.004)
    report = run_sweep(base, "epsilon", (1e-3, -1.0), tmp_path)
    assert set(report.errors) == {-1.0}
    assert "InvariantViolation" in report.errors[-1.0]
    assert math.isnan(report.metrics["r_delta"][1])
    assert math.isfinite(report.metrics["r_delta"][0])
    assert (tmp_path / "rates.csv").exists()


def test_sweep_input_validation(small_config, tmp_path):
    with pytest.raises(DomainError, match="at least two"):
        run_sweep(small_config, "delta", (0.1,), tmp_path)
    with pytest.raises(InvariantViolation, match="monotone"):
        run_sweep(small_config, "delta", (0.1, 0.3, 0.2), tmp_path)
    with pytest.raises(DomainError, match="sweep parameter"):
        run_sweep(small_config, "alpha", (0.1, 0.2, 0.3), tmp_path)
    bad = dataclasses.replace(small_config, vartheta=2.5)
    with pytest.raises(InvariantViolation, match="vartheta"):
        run_sweep(bad, "delta", (0.1, 0.05, 0.01), tmp_path)


def test_rates_file_embeds_slopes(nsweep):
    _, out, report = nsweep
    text = (Path(out) / "rates.csv").read_text()
    footers = [l[2:] for l in text.splitlines() if l.startswith("# ")]
    for line in report.footer_lines():
        assert line in footers

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vectoradam import diagnostics as d
from vectoradam.mesh import make_circle, make_disk, make_icosphere
from vectoradam.optim import Hyper
from vectoradam.tensor import Rotation

CIRCLE = make_circle(64)
DISK = make_disk(3)


@pytest.mark.parametrize("opt", ["gd", "adam", "vectoradam", "vectoradam-inf"])
def test_identity_rotation_gives_exact_zero(opt):
    rep = d.check_equivariance(opt, "laplacian", CIRCLE, steps=20, rotation=Rotation.identity(2))
    assert rep.deviations == [0.0] * 20


@pytest.mark.parametrize("energy_id,mesh", [("laplacian", CIRCLE), ("symdir", DISK), ("arap", DISK)])
def test_gd_equivariant(energy_id, mesh):
    rep = d.check_equivariance("gd", energy_id, mesh, steps=50, seed=4, hyper=Hyper(alpha=1e-3), tolerance=1e-9)
    assert rep.passed


@pytest.mark.parametrize("opt", ["vectoradam", "vectoradam-inf"])
@pytest.mark.parametrize("energy_id,mesh", [("laplacian", CIRCLE), ("laplacian", make_icosphere(1)),
                                            ("symdir", DISK), ("arap", DISK)])
def test_vector_optimizers_equivariant(opt, energy_id, mesh):
    rep = d.check_equivariance(opt, energy_id, mesh, steps=100, seed=11)
    assert len(rep.deviations) == 100
    assert min(rep.deviations) >= 0
    assert rep.passed, rep.max_deviation


def test_adam_witness():
    rep = d.check_equivariance("adam", "laplacian", CIRCLE, rotation=Rotation.from_angle(math.radians(30)),
                               tolerance=1e-3, expect="nonequivariant")
    assert rep.passed
    assert json.loads(json.dumps(rep.to_dict()))["passed"] is True
    rows = list(rep.csv_rows())
    assert rows[0] == ("step", "deviation") and len(rows) == 101


def test_quarter_turn_leaves_adam_equivariant():
    # an exact 90 degree turn only permutes and negates coordinates
    rep = d.check_equivariance("adam", "laplacian", CIRCLE, rotation=Rotation(np.array([[0.0, -1.0], [1.0, 0.0]])))
    assert rep.max_deviation == 0.0


def test_adam_reacts_to_rounding_in_quarter_turn():
    # cos(pi/2) = 6e-17 turns exactly-zero gradient entries into tiny ones,
    # which Adam then inflates to full alpha-sized steps
    rep = d.check_equivariance("adam", "laplacian", CIRCLE, rotation=Rotation.from_angle(math.pi / 2))
    assert rep.max_deviation > 1e-3


def test_check_equivariance_bad_expect():
    with pytest.raises(ValueError):
        d.check_equivariance("adam", "laplacian", CIRCLE, steps=1, expect="maybe")


@given(st.floats(0, 360, exclude_max=True))
def test_near_diagonal(a):
    dist = min(abs(a - c) for c in (45, 135, 225, 315))
    assert bool(d.near_diagonal(np.array([a]), 5.0)[0]) == (dist <= 5.0)


def test_histogram_bookkeeping():
    mesh = make_disk(2)
    h = d.first_step_histogram("vectoradam", "arap", mesh, trials=3, steps=5, seed=1, bins=360)
    assert h.total + h.skipped == 3 * 5 * mesh.n_vertices
    assert h.bins == 360 and len(h.edges) == 361
    assert 0 <= h.spike <= 1 and 0 <= h.uniformity <= 1
    rows = list(h.csv_rows())
    assert len(rows) == 361 and sum(r[2] for r in rows[1:]) == h.total


def test_histogram_deterministic_and_seeded():
    mesh = make_disk(2)
    a = d.first_step_histogram("adam", "arap", mesh, trials=4, steps=3, seed=5)
    b = d.first_step_histogram("adam", "arap", mesh, trials=4, steps=3, seed=5)
    c = d.first_step_histogram("adam", "arap", mesh, trials=4, steps=3, seed=6)
    assert np.array_equal(a.counts, b.counts) and a.spike == b.spike
    assert not np.array_equal(a.counts, c.counts)


def test_histogram_counts_zero_updates_as_skipped():
    # steps far below one ulp leave every vertex away from the origin in place
    mesh = make_disk(2)
    h = d.first_step_histogram("gd", "symdir", mesh, trials=1, steps=1, hyper=Hyper(alpha=1e-30))
    assert h.skipped >= mesh.n_vertices - 1
    assert h.total + h.skipped == mesh.n_vertices


def test_histogram_needs_2d():
    with pytest.raises(ValueError):
        d.first_step_histogram("adam", "laplacian", make_icosphere(0), trials=1, steps=1)


def test_anisotropy_initial_ratio():
    rep = d.anisotropy_track("adam", make_circle(256), steps=5)
    assert abs(rep.ratios[0] - 1.0) < 0.02
    assert rep.mean_radius[0] == pytest.approx(1.0)
    assert all(r > 0 for r in rep.ratios)


def test_anisotropy_milestone_missing():
    rep = d.anisotropy_track("vectoradam", make_circle(64), steps=3)
    assert rep.milestone() == (None, None)
    assert rep.to_dict()["half_radius_step"] is None


def test_diagonal_axis_ratio_square():
    # vertices of an axis-aligned square: corners are sqrt(2) further out
    p = np.array([[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1]], dtype=float)
    assert d.diagonal_axis_ratio(p) == pytest.approx(math.sqrt(2))
    assert math.isnan(d.diagonal_axis_ratio(np.zeros((4, 2))))


def test_gradient_error_scale():
    a = np.array([1.0, 1e-12])
    n = np.array([1.0, 2e-12])
    assert d.gradient_error(a, n).max() == pytest.approx(1e-12)


@pytest.mark.parametrize("energy_id,mesh", [("quad", CIRCLE), ("laplacian", CIRCLE), ("symdir", DISK), ("arap", DISK)])
def test_gradcheck_passes(energy_id, mesh):
    res = d.gradcheck(energy_id, mesh, points=3, seed=2)
    assert res.max_error < d.GRADCHECK_TOL[energy_id]
    assert len(res.per_probe) == 3 and not res.failed_probes


def test_gradcheck_detects_bad_step():
    assert d.gradcheck("arap", DISK, points=2, h=1.0).max_error > 1e-3


def test_gradcheck_records_failed_probe():
    res = d.gradcheck("symdir", DISK, points=2, scale=10.0)
    assert res.failed_probes
    assert res.per_probe.count(None) == len(res.failed_probes)


def test_gradcheck_deterministic():
    a, b = d.gradcheck("arap", DISK, points=2, seed=9), d.gradcheck("arap", DISK, points=2, seed=9)
    assert a.to_dict() == b.to_dict()


def test_spread_single_rotation_is_zero():
    rep = d.rotated_loss_spread("adam", "symdir", DISK, rotations=1, steps=10)
    assert not rep.spread.any()


def test_spread_shapes_and_rows():
    rep = d.rotated_loss_spread("vectoradam", "arap", DISK, rotations=4, steps=10)
    assert rep.losses.shape == (4, 11)
    assert rep.angles == pytest.approx([0, math.pi / 2, math.pi, 3 * math.pi / 2])
    assert len(list(rep.csv_rows())) == 12
    assert list(rep.curve_rows())[0] == ("step", "rot0", "rot1", "rot2", "rot3")
    assert rep.normalized.max() < 1e-6

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vectoradam.diagnostics import check_equivariance, finite_difference, gradient_error
from vectoradam.energy import (
    ENERGIES,
    ArapEnergy,
    DegenerateTriangleError,
    LaplacianEnergy,
    QuadEnergy,
    SymmetricDirichletEnergy,
    UmbrellaEnergy,
    deform,
    initial_params,
    make_energy,
)
from vectoradam.mesh import TriMesh, make_circle, make_disk, make_icosphere
from vectoradam.optim import Hyper, run
from vectoradam.tensor import Rotation, apply_rotation, random_rotation

DISK = make_disk(4)
CIRCLE = make_circle(64)
SQUARE = TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), [[0, 1, 2], [0, 2, 3]],
                 rest_vertices=np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))


def rest_areas(mesh):
    v, t = mesh.rest(), mesh.triangles
    a, b = v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def cases():
    """(energy id, mesh) pairs covering every energy."""
    return [("laplacian", CIRCLE), ("laplacian", make_icosphere(1)), ("umbrella", CIRCLE),
            ("symdir", DISK), ("arap", DISK)]


# -- closed forms -----------------------------------------------------------

def test_laplacian_circle_closed_form():
    k = 64
    value = LaplacianEnergy(CIRCLE).value(CIRCLE.vertices)
    direct = sum(np.sum((CIRCLE.vertices[i] - CIRCLE.vertices[(i + 1) % k]) ** 2) for i in range(k))
    assert value == pytest.approx(k * 2 * (1 - math.cos(2 * math.pi / k)), rel=1e-12)
    assert value == pytest.approx(direct, rel=1e-12)


def test_umbrella_circle_closed_form():
    k = 64
    v = CIRCLE.vertices
    direct = sum(np.sum((v[i] - 0.5 * (v[i - 1] + v[(i + 1) % k])) ** 2) for i in range(k))
    value = UmbrellaEnergy(CIRCLE).value(v)
    assert value == pytest.approx(k * (1 - math.cos(2 * math.pi / k)) ** 2, rel=1e-10)
    assert value == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("cls", [LaplacianEnergy, UmbrellaEnergy])
def test_laplacians_vanish_on_coincident_vertices(cls):
    p = np.tile([[0.3, -1.2]], (64, 1))
    value, grad = cls(CIRCLE).value_and_gradient(p)
    assert value == 0.0
    assert not grad.any()


@pytest.mark.parametrize("cls", [LaplacianEnergy, UmbrellaEnergy])
def test_isolated_vertex_rejected(cls):
    mesh = TriMesh(np.zeros((4, 2)), lines=[[0, 1], [1, 2]])
    with pytest.raises(ValueError, match="isolated"):
        cls(mesh)


def test_symdir_identity_and_rigid():
    e = SymmetricDirichletEnergy(DISK)
    expected = 4.0 * rest_areas(DISK).sum()
    assert e.value(DISK.rest()) == pytest.approx(expected, rel=1e-12)
    rotated = apply_rotation(Rotation.from_angle(1.1), DISK.rest()) + [2.0, -3.0]
    assert abs(e.value(rotated) - expected) <= 1e-10 * expected


def test_symdir_degenerate_triangle_names_index():
    p = SQUARE.rest().copy()
    p[2] = [2.0, 0.0]  # triangle 0 becomes collinear
    with pytest.raises(DegenerateTriangleError) as err:
        SymmetricDirichletEnergy(SQUARE).value(p)
    assert err.value.index == 0


def test_symdir_rejects_bad_rest():
    with pytest.raises(ValueError):
        SymmetricDirichletEnergy(make_icosphere(0))
    flipped = TriMesh(SQUARE.vertices, [[0, 2, 1]])
    with pytest.raises(ValueError, match="area"):
        SymmetricDirichletEnergy(flipped)


def test_symdir_square_gradient_fd(rng):
    e = SymmetricDirichletEnergy(SQUARE)
    for _ in range(10):
        p = SQUARE.rest() + 0.05 * rng.standard_normal((4, 2))
        err = gradient_error(e.gradient(p), finite_difference(e.value, p, 1e-6))
        assert err.max() < 1e-5


def test_arap_rest_and_rigid():
    e = ArapEnergy(DISK)
    value, grad = e.value_and_gradient(DISK.rest())
    assert value == 0.0 and not grad.any()
    R = Rotation.from_angle(2.5)
    moved = apply_rotation(R, DISK.rest()) + [1.0, 4.0]
    assert e.value(moved) < 1e-10
    np.testing.assert_allclose(e.rotations(moved), np.broadcast_to(R.mat, (DISK.n_vertices, 2, 2)), atol=1e-12)


def test_arap_rotation_tie_is_identity():
    # every vertex collapsed onto one point: zero covariance everywhere
    p = np.zeros_like(DISK.rest())
    np.testing.assert_array_equal(ArapEnergy(DISK).rotations(p), np.broadcast_to(np.eye(2), (DISK.n_vertices, 2, 2)))


def test_arap_rotation_is_local_minimizer(rng):
    # perturbing any fitted rotation angle can only increase the energy
    e = ArapEnergy(DISK)
    p = deform(DISK.rest())
    base = e.value(p)
    R = e.rotations(p)
    for dphi in (-1e-3, 1e-3):
        Q = R @ Rotation.from_angle(dphi).mat
        d = p[e.src] - p[e.dst]
        r = d - np.einsum("eij,ej->ei", Q[e.src], e.rest_edges)
        assert np.sum(r * r) > base


def test_quad():
    target = np.arange(6.0).reshape(3, 2)
    e = QuadEnergy(target)
    assert e.value(target) == 0.0
    assert not e.gradient(target).any()
    p = target + 1.0
    np.testing.assert_array_equal(e.gradient(p), p - target)
    assert run("gd", Hyper(alpha=1.0), e, p, 1).losses[-1] == 0.0


@pytest.mark.parametrize("energy_id", ENERGIES)
def test_shape_checked(energy_id):
    mesh = CIRCLE if energy_id in ("laplacian", "umbrella", "quad") else DISK
    e = make_energy(energy_id, mesh)
    with pytest.raises(ValueError):
        e.value(np.zeros((3, 2)))


def test_unknown_energy():
    with pytest.raises(ValueError):
        make_energy("cotan", CIRCLE)


def test_deform_preserves_orientation():
    mesh = make_disk(7)
    assert np.all(rest_areas(TriMesh(deform(mesh.rest()), mesh.triangles)) > 0)


# -- invariance and equivariance ------------------------------------------

def _start(energy_id, mesh, seed):
    rng = np.random.default_rng(seed)
    return initial_params(energy_id, mesh) + 0.01 * rng.standard_normal(mesh.vertices.shape)


@pytest.mark.parametrize("energy_id,mesh", cases())
@given(seed=st.integers(0, 2**32 - 1))
def test_value_rotation_invariant(energy_id, mesh, seed):
    e = make_energy(energy_id, mesh)
    p = _start(energy_id, mesh, seed)
    R = random_rotation(mesh.dim, seed)
    a, b = e.value(p), e.value(apply_rotation(R, p))
    assert abs(a - b) <= 1e-10 * (1 + abs(a))


@pytest.mark.parametrize("energy_id,mesh", cases())
@given(seed=st.integers(0, 2**32 - 1))
def test_gradient_rotation_equivariant(energy_id, mesh, seed):
    e = make_energy(energy_id, mesh)
    p = _start(energy_id, mesh, seed)
    R = random_rotation(mesh.dim, seed)
    g = e.gradient(p)
    gr = e.gradient(apply_rotation(R, p))
    assert np.max(np.abs(gr - apply_rotation(R, g))) <= 1e-9 * (1 + np.max(np.abs(g)))


def test_laplacian_rotation_invariance_100_rotations():
    e = LaplacianEnergy(CIRCLE)
    p = CIRCLE.vertices
    base = e.value(p)
    for seed in range(100):
        assert abs(e.value(apply_rotation(random_rotation(2, seed), p)) - base) <= 1e-10 * base


@pytest.mark.parametrize("cls", [LaplacianEnergy, UmbrellaEnergy])
@given(shift=st.tuples(st.floats(-100, 100), st.floats(-100, 100)))
def test_laplacian_translation_invariant(cls, shift):
    e = cls(CIRCLE)
    p = CIRCLE.vertices
    a, b = e.value(p), e.value(p + np.array(shift))
    assert abs(a - b) <= 1e-10 * (1 + a) * (1 + max(map(abs, shift))) ** 2


@pytest.mark.parametrize("energy_id,mesh", cases() + [("quad", DISK)])
def test_gradient_matches_finite_differences(energy_id, mesh, rng):
    e = make_energy(energy_id, mesh)
    tol = 1e-4 if energy_id == "arap" else 1e-5
    for _ in range(3):
        p = initial_params(energy_id, mesh) + 0.01 * rng.standard_normal(mesh.vertices.shape)
        assert gradient_error(e.gradient(p), finite_difference(e.value, p, 1e-6)).max() < tol


@pytest.mark.parametrize("energy_id,mesh", cases())
def test_value_and_gradient_consistent(energy_id, mesh):
    e = make_energy(energy_id, mesh)
    p = _start(energy_id, mesh, 1)
    v, g = e.value_and_gradient(p)
    assert v == e.value(p)
    assert np.array_equal(g, e.gradient(p))
    assert g.shape == p.shape


# -- conditioning of the umbrella form ----------------------------------

def test_umbrella_trajectories_amplify_roundoff():
    # A 1e-15 nudge of the start grows by many orders of magnitude under
    # VectorAdam at alpha = 1e-2: the umbrella energy is too stiff for
    # trajectory comparison at that step size.
    e = UmbrellaEnergy(CIRCLE)
    p0 = CIRCLE.vertices
    a = run("vectoradam", Hyper(), e, p0, 100).final
    b = run("vectoradam", Hyper(), e, p0 + 1e-15, 100).final
    assert np.max(np.abs(a - b)) > 1e-8


def test_umbrella_equivariant_at_small_step():
    rep = check_equivariance("vectoradam", "umbrella", CIRCLE, steps=100, seed=0, hyper=Hyper(alpha=1e-4))
    assert rep.max_deviation < 1e-6

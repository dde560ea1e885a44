import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpmcf.ambient import Dimensions, distance_arrays
from cpmcf.errors import ContractViolation, DegenerateImmersionError
from cpmcf.immersion import (DiscreteImmersion, GridKind, GridTopology, build_clifford_torus,
                             build_geodesic_sphere, build_totally_geodesic, extract_geometry, fd_weights,
                             load_snapshot, mean_curvature_vector, perturb, random_unitary, save_snapshot)
from cpmcf.oracles import sphere_radius_table


@pytest.fixture(scope="module")
def sphere16():
    return build_geodesic_sphere(2, math.pi / 4, 16)


@pytest.fixture(scope="module")
def geom16(sphere16):
    return extract_geometry(sphere16)


def test_topology_contract():
    with pytest.raises(ContractViolation):
        GridTopology(GridKind.TORUS_LATTICE, (7, 8), (True, True), (0.1, 0.1))
    with pytest.raises(ContractViolation):
        GridTopology(GridKind.TORUS_LATTICE, (8, 8), (True, True), (0.1, 0.0))
    t = GridTopology(GridKind.PRODUCT_ANGLES, (8, 9), (False, True), (0.1, 0.2), (0.3, 0.0))
    assert GridTopology.from_dict(t.to_dict()) == t


def test_fd_weights():
    np.testing.assert_allclose(fd_weights([-1, 0, 1], 1), [-0.5, 0, 0.5], atol=1e-14)
    np.testing.assert_allclose(fd_weights([-2, -1, 0, 1, 2], 2), [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12], atol=1e-13)


def test_sphere_nodes_at_radius():
    U = random_unitary(3, 5)
    im = build_geodesic_sphere(2, 0.7, 12, rotation=U)
    c = U[:, 0]
    d = distance_arrays(np.broadcast_to(c, im.z.shape), im.z)
    assert np.max(np.abs(d - 0.7)) < 1e-10


def test_sphere_radius_range():
    with pytest.raises(ContractViolation):
        build_geodesic_sphere(2, math.pi / 2 - 0.2, 16)
    with pytest.raises(ContractViolation):
        build_geodesic_sphere(2, 0.0, 16)
    build_geodesic_sphere(2, math.pi / 2 - 0.6, 16)


def test_sphere_volume_element_positive(geom16):
    assert np.all(geom16.detg > 0)


def test_sphere_basic_relations(geom16):
    inv = geom16.inv
    np.testing.assert_allclose(inv.normtrace2, inv.normh2 - inv.normH2 / 3, atol=1e-10)
    np.testing.assert_allclose(inv.normP2, 1.0, atol=1e-10)
    g = geom16.g
    np.testing.assert_allclose(g, np.swapaxes(g, -1, -2), atol=1e-14)
    np.testing.assert_allclose(geom16.h, np.swapaxes(geom16.h, -1, -2), atol=1e-14)
    lhs = geom16.normGradTraceless2
    rhs = geom16.normGradh2 - geom16.normGradH2 / 3
    np.testing.assert_allclose(lhs, rhs, rtol=1e-8, atol=1e-12)


def test_sphere_umbilic_ratio_matches_oracle(geom16, sphere16):
    tab = sphere_radius_table(2)
    k = int(np.argmin(np.abs(tab.radii - math.pi / 4)))
    inner = sphere16.topology.interior_mask()
    inv = geom16.inv
    ratio = inv.normtrace2[inner] / inv.normh2[inner]
    assert np.max(np.abs(ratio - tab.ratio[k])) <= 2e-2 * tab.ratio[k]


def test_sphere_H_refinement(sphere16):
    # H on the charted region approaches the reference value 2 at r = pi/4
    errs = []
    for N in (12, 16):
        im = build_geodesic_sphere(2, math.pi / 4, N)
        g = extract_geometry(im, gradients=False)
        errs.append(np.max(np.abs(np.sqrt(g.inv.normH2) - 2)))
    assert errs[1] < errs[0]
    assert errs[1] < 5e-2


def test_hvec_matches_framefree(sphere16, geom16):
    L = mean_curvature_vector(sphere16)
    np.testing.assert_allclose(L, geom16.Hvec, atol=1e-9)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gauge_invariance(seed):
    im = build_geodesic_sphere(2, 0.7, 10)
    rng = np.random.default_rng(seed)
    ph = np.exp(1j * rng.uniform(0, 2 * math.pi, im.topology.shape))
    im2 = DiscreteImmersion(im.topology, im.z * ph[..., None], im.dims)
    a, b = extract_geometry(im), extract_geometry(im2)
    for k, v in a.scalar_fields().items():
        np.testing.assert_allclose(b.scalar_fields()[k], v, atol=1e-10, rtol=1e-10, err_msg=k)


def test_totally_geodesic_complex_line():
    im = build_totally_geodesic("CP_half_n", Dimensions(2, 2), 32)
    g = extract_geometry(im)
    assert g.inv.normh2.max() <= 1e-8
    np.testing.assert_allclose(g.inv.normP2, 0.0, atol=1e-12)


def test_totally_geodesic_real_locus():
    im = build_totally_geodesic("RP_n", Dimensions(2, 2), 64)
    g = extract_geometry(im, gradients=False)
    assert g.inv.normh2.max() <= 1e-6
    np.testing.assert_allclose(g.inv.normP2, 2.0, atol=1e-12)


def test_real_locus_coarse_and_rotated():
    # every homogeneous coordinate changes sign somewhere on the chart
    U = random_unitary(3, 2)
    im = build_totally_geodesic("RP_n", Dimensions(2, 2), 16, rotation=U)
    assert extract_geometry(im, gradients=False).inv.normh2.max() <= 1e-6


def test_rotated_chart_matches_unrotated():
    a = extract_geometry(build_geodesic_sphere(2, math.pi / 4, 12))
    b = extract_geometry(build_geodesic_sphere(2, math.pi / 4, 12, rotation=random_unitary(3, 5)))
    for k, v in a.scalar_fields().items():
        np.testing.assert_allclose(b.scalar_fields()[k], v, atol=1e-9, rtol=1e-9, err_msg=k)


def test_stencil_beyond_quarter_turn_rejected():
    topo = GridTopology(GridKind.TORUS_LATTICE, (8, 8), (True, True), (2 * math.pi / 8,) * 2)
    g = np.meshgrid(*[topo.coords(a) for a in range(2)], indexing="ij")
    # a coarse torus with large edges: stencil neighbours nearly orthogonal to the centre
    z = np.stack([np.ones((8, 8)) * 0.05 + 0j, np.exp(2j * g[0]), np.exp(2j * g[1])], axis=-1)
    z /= np.linalg.norm(z, axis=-1, keepdims=True)
    with pytest.raises((DegenerateImmersionError, ContractViolation)):
        DiscreteImmersion(topo, z, Dimensions(2, 2))


def test_totally_geodesic_parity():
    with pytest.raises(ContractViolation):
        build_totally_geodesic("CP_half_n", Dimensions(3, 1), 16)


def test_clifford_torus():
    coarse = np.sqrt(extract_geometry(build_clifford_torus(2, 32), gradients=False).inv.normH2).max()
    im = build_clifford_torus(2, 64)
    g = extract_geometry(im)
    assert np.sqrt(g.inv.normH2).max() <= min(1e-4, coarse / 8)
    h2 = g.inv.normh2
    assert (h2.max() - h2.min()) <= 1e-6 * h2.mean()
    np.testing.assert_allclose(g.inv.normP2, 2.0, atol=1e-10)


def test_perturb():
    im = build_geodesic_sphere(2, 0.8, 12)
    assert np.array_equal(perturb(im, 0.0).z, im.z)
    a = perturb(im, 0.01, seed=3)
    b = perturb(im, 0.01, seed=3)
    assert np.array_equal(a.z, b.z)
    assert not np.array_equal(a.z, perturb(im, 0.01, seed=4).z)
    with pytest.raises(ContractViolation):
        perturb(im, 0.5)


def test_perturb_margin_continuous():
    from cpmcf.pinching import PinchingCase, pinching_rhs
    im = build_geodesic_sphere(2, 0.8, 12)
    case = PinchingCase.of(im.dims)
    inner = im.topology.interior_mask()
    margins = []
    for amp in (0.0, 1e-4, 2e-4, 4e-4):
        inv = extract_geometry(perturb(im, amp, seed=1), gradients=False).inv
        margins.append(np.min((pinching_rhs(inv.normH2, case) - inv.normh2)[inner]))
    steps = np.abs(np.diff(margins))
    assert steps.max() < 0.05
    assert steps[2] > steps[1] * 1.2


def test_degenerate_immersion_rejected():
    im = build_clifford_torus(2, 8)
    z = np.broadcast_to(im.z[0, 0], im.z.shape).copy()
    with pytest.raises(DegenerateImmersionError):
        DiscreteImmersion(im.topology, z, im.dims)


def test_snapshot_roundtrip(tmp_path):
    im = build_geodesic_sphere(2, 0.6, 10)
    p = tmp_path / "s.bin"
    save_snapshot(p, im, time=0.25)
    im2, t = load_snapshot(p)
    assert t == 0.25
    assert np.array_equal(im2.z, im.z)
    assert im2.topology == im.topology and im2.dims == im.dims

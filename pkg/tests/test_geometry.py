import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voronoi_wta.geometry import (
    Domain,
    VoronoiTessellation,
    assign,
    directional_radii,
    grid_dims,
    random_directions,
    regular_grid,
)
from voronoi_wta.metrics import lloyd

BOX = Domain.cube(2)
PAIR = VoronoiTessellation(np.array([[-0.5, 0.0], [0.5, 0.0]]), BOX)


def test_domain_volume_and_validation():
    assert BOX.volume() == 4.0
    assert Domain.cube(3, 0.5).volume() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        Domain([0.0, 1.0], [1.0, 1.0])


@pytest.mark.parametrize(
    "gens, y, expected",
    [
        ([[-0.5, 0.0], [0.5, 0.0]], (-0.1, 0.3), 0),
        ([[0.0, 0.0]], (0.7, -0.9), 0),
        ([[0.0, 0.0], [1.0, 0.0]], (0.5, 0.7), 0),  # equidistant: lowest index
    ],
)
def test_winner_index_examples(gens, y, expected):
    t = VoronoiTessellation(np.array(gens), BOX)
    assert t.winner_index(np.array(y)) == expected


def test_winner_index_outside_domain_is_defined():
    assert PAIR.winner_index(np.array([5.0, 3.0])) == 1


def test_partition_matches_brute_force_scan():
    rng = np.random.default_rng(0)
    gens = BOX.uniform(12, rng)
    y = BOX.uniform(10_000, rng)
    t = VoronoiTessellation(gens, BOX)
    sq = ((y[:, None, :] - gens[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(t.winner_index(y), np.argmin(sq, axis=1))
    # exactly one strict minimiser per point (ties have measure zero)
    best = sq.min(axis=1, keepdims=True)
    assert np.all((sq == best).sum(axis=1) == 1)


def test_assign_broadcasts_over_batches():
    rng = np.random.default_rng(1)
    gens = rng.uniform(-1, 1, (3, 5, 2))
    y = rng.uniform(-1, 1, (3, 7, 2))
    out = assign(y, gens)
    for b in range(3):
        np.testing.assert_array_equal(out[b], assign(y[b], gens[b]))


@pytest.mark.parametrize("s, expected", [((1.0, 0.0), 0.5), ((-1.0, 0.0), 0.5)])
def test_directional_radius_examples(s, expected):
    assert PAIR.directional_radius(0, np.array(s)) == pytest.approx(expected, abs=1e-12)


def test_directional_radius_matches_ray_march():
    # independent oracle: step along the ray until the winner or box membership changes
    s = np.array([0.0, 1.0])
    step, u = 1e-4, 0.0
    while True:
        p = PAIR.generators[0] + (u + step) * s
        if PAIR.winner_index(p) != 0 or not BOX.contains(p):
            break
        u += step
    assert PAIR.directional_radius(0, s) == pytest.approx(1.0, abs=1e-12)
    assert abs(PAIR.directional_radius(0, s) - u) <= step


def test_directional_radius_rejects_non_unit_direction():
    with pytest.raises(ValueError):
        PAIR.directional_radius(0, np.array([1.0, 1.0]))


def test_directional_radius_zero_on_boundary():
    t = VoronoiTessellation(np.array([[1.0, 0.0], [0.0, 0.0]]), BOX)
    assert t.directional_radius(0, np.array([1.0, 0.0])) == 0.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 10), d=st.integers(1, 3))
def test_directional_radius_is_the_cell_boundary(seed, K, d):
    rng = np.random.default_rng(seed)
    dom = Domain.cube(d)
    t = VoronoiTessellation(dom.uniform(K, rng), dom)
    k = int(rng.integers(K))
    s = random_directions(1, d, rng)[0]
    l = t.directional_radius(k, s)
    z = t.generators[k]
    if l == 0.0:
        return
    eps = 1e-6 * l
    assert t.winner_index(z + (l - eps) * s) == k
    beyond = z + (l + eps) * s
    assert not dom.contains(beyond) or t.winner_index(beyond) != k
    # convexity: the whole segment stays in the cell
    for u in np.linspace(0.0, l - eps, 100):
        assert t.winner_index(z + u * s) == k


def test_batched_radii_agree_with_single_calls():
    rng = np.random.default_rng(2)
    gens = rng.uniform(-0.9, 0.9, (4, 6, 2))
    k = np.array([0, 3, 5, 2])
    dirs = random_directions(9, 2, rng)
    out = directional_radii(gens, k, dirs, BOX.lower, BOX.upper)
    for b in range(4):
        t = VoronoiTessellation(gens[b], BOX)
        np.testing.assert_allclose(out[b], t.directional_radius(int(k[b]), dirs), rtol=0, atol=1e-15)


def test_cell_diameter_bound_examples():
    assert PAIR.cell_diameter_bound(0, 1, directions=np.array([[1.0, 0.0]])) == pytest.approx(1.0)
    single = VoronoiTessellation(np.zeros((1, 2)), BOX)
    bound = single.cell_diameter_bound(0, 20_000, np.random.default_rng(0))
    assert 2.8 < bound <= 2.0 * np.sqrt(2.0) + 1e-12
    with pytest.raises(ValueError):
        single.cell_diameter_bound(0, 0, np.random.default_rng(0))


def test_cell_diameter_bound_monotone_in_stream_prefix():
    t = VoronoiTessellation(BOX.uniform(8, np.random.default_rng(3)), BOX)
    dirs = random_directions(400, 2, np.random.default_rng(4))
    vals = [t.cell_diameter_bound(2, n, directions=dirs) for n in (1, 10, 50, 400)]
    assert vals == sorted(vals)


def test_vanishing_diameter_with_lloyd_generators():
    rng = np.random.default_rng(5)
    samples = BOX.uniform(40_000, rng)
    dirs = random_directions(200, 2, rng)
    maxima = []
    for K in (4, 16, 64, 256):
        r, c = grid_dims(K)
        gens = lloyd(regular_grid((r, c), BOX) + rng.normal(0, 1e-3, (K, 2)), samples, iters=20)
        gens = np.clip(gens, -1.0, 1.0)
        t = VoronoiTessellation(gens, BOX)
        maxima.append(max(t.cell_diameter_bound(k, 200, directions=dirs) for k in range(K)))
    assert all(a > b for a, b in zip(maxima, maxima[1:]))


def test_duplicates_are_perturbed_and_flagged():
    t = VoronoiTessellation(np.array([[0.1, 0.2], [0.1, 0.2], [0.5, 0.5]]), BOX)
    assert t.perturbed
    assert t.generators[1, 0] == pytest.approx(0.1 + 1e-8)
    assert not PAIR.perturbed


def test_generators_outside_domain_rejected():
    with pytest.raises(ValueError):
        VoronoiTessellation(np.array([[0.0, 1.5]]), BOX)


def test_grid_helpers():
    assert grid_dims(16) == (4, 4)
    assert grid_dims(20) == (5, 4)
    assert grid_dims(7) == (7, 1)
    pts = regular_grid((2, 2), BOX)
    np.testing.assert_allclose(pts, [[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]])

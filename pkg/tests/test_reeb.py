import json

import numpy as np
import pytest

from reebflow.errors import DomainError
from reebflow.reeb import ReebGraph, VertexKind, graph_distance, project, project_many


def _level_components(H, z, n=500):
    from skimage.measure import label
    s = np.linspace(-H.r_max, H.r_max, n)
    X, Y = np.meshgrid(s, s, indexing="ij")
    inside = H.h(np.stack([X, Y], -1)) < z
    # each component of the sublevel set is bounded by one level curve here
    return int(label(inside, connectivity=1).max())


def test_edge_count_matches_component_oracle(twowell):
    g = twowell.graph
    for z in np.linspace(0.05, 7.5, 25):
        live = sum(e.z_lo < z < e.z_hi for e in g.edges)
        assert live == _level_components(twowell.H, z)


def test_twowell_graph_shape(twowell):
    g = twowell.graph
    # a tree on two minima, one saddle and the infinity vertex
    assert len(g.edges) == 3
    kinds = sorted(v.kind.value for v in g.vertices)
    assert kinds == ["Extremum", "Extremum", "Infinity", "Saddle"]
    sad = g.saddles()[0]
    assert len(g.incident(sad.id)) == 3
    # the saddle has two edges below it and one above
    signs = sorted(s for _, s in g.incident(sad.id))
    assert signs == [-1, 1, 1] or signs == [-1, -1, 1]


def test_radial_graph_is_one_edge(radial):
    g = radial.graph
    assert len(g.edges) == 1
    e = g.edges[0]
    assert e.z_lo == pytest.approx(0.0, abs=1e-12) and e.z_hi == g.z_max


def test_json_roundtrip(twowell):
    d = json.loads(twowell.graph.to_json())
    g2 = ReebGraph.from_dict(d)
    assert g2.to_dict() == twowell.graph.to_dict()


def test_projection_labels_wells(twowell):
    H, a, g = twowell.H, twowell.atlas, twowell.graph
    left = project(a, H, [-1.0, 0.3])
    right = project(a, H, [1.0, 0.3])
    assert left.k != right.k
    assert left.z == pytest.approx(float(H.h(np.array([-1.0, 0.3]))))
    for p in (left, right):
        e = g.edges[p.k]
        assert e.z_lo <= p.z <= e.z_hi
    outer = project(a, H, [0.0, 2.5])
    assert g.edges[outer.k].v_hi == g.infinity.id


def test_projection_is_constant_on_level_components(twowell, rng):
    H, a = twowell.H, twowell.atlas
    th = rng.uniform(0, 2 * np.pi, 50)
    # a small circle around the left minimum stays in one well component
    pts = np.stack([-1.05 + 0.3 * np.cos(th), 0.3 * np.sin(th)], -1)
    z, k, _ = project_many(a, H, pts)
    assert len(set(k.tolist())) == 1


def test_project_many_matches_scalar(twowell, rng):
    H, a = twowell.H, twowell.atlas
    pts = rng.uniform(-2, 2, size=(200, 2))
    z, k, _ = project_many(a, H, pts)
    for i in range(0, 200, 17):
        if k[i] < 0:
            continue
        p = project(a, H, pts[i])
        assert p.k == k[i] and p.z == pytest.approx(z[i])


def test_projection_above_cap(twowell):
    with pytest.raises(DomainError):
        project(twowell.atlas, twowell.H, [3.0, 3.0])
    z, k, _ = project_many(twowell.atlas, twowell.H, np.array([[3.0, 3.0]]))
    assert k[0] < 0


def test_graph_distance_is_a_metric(twowell):
    H, a, g = twowell.H, twowell.atlas, twowell.graph
    p, q, r = (project(a, H, x) for x in ([-1.0, 0.3], [1.0, 0.3], [0.0, 1.5]))
    assert graph_distance(g, p, p) == 0
    assert graph_distance(g, p, q) == pytest.approx(graph_distance(g, q, p))
    assert graph_distance(g, p, q) <= graph_distance(g, p, r) + graph_distance(g, r, q) + 1e-12
    # the two wells only connect through the saddle
    zs = g.saddles()[0].z
    assert graph_distance(g, p, q) == pytest.approx((zs - p.z) + (zs - q.z))

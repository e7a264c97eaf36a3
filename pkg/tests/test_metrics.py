import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roadadapt.exceptions import FormatError, UsageError
from roadadapt.metrics import RoadGraph, apls, evaluate, extract_graph, iou_f1, mask_apls
from roadadapt.skeleton import skeletonize

from conftest import random_blob

masks = arrays(np.uint8, (8, 9), elements=st.integers(0, 1))


def line(h, w, rows, cols):
    m = np.zeros((h, w), np.uint8)
    m[rows, cols] = 1
    return m


def to_nx(g):
    G = nx.Graph()
    G.add_nodes_from(range(g.n_nodes))
    for a, b, length in g.edges:
        if a != b and (not G.has_edge(a, b) or G[a][b]["weight"] > length):
            G.add_edge(a, b, weight=length)
    return G


def apls_oracle(gt, prop, radius):
    """Direct transcription of the documented score using networkx paths."""
    if gt.n_nodes == 0 and prop.n_nodes == 0:
        return 1.0
    if gt.n_nodes == 0 or prop.n_nodes == 0:
        return 0.0

    def direction(ref, other):
        R = dict(nx.all_pairs_dijkstra_path_length(to_nx(ref)))
        O = dict(nx.all_pairs_dijkstra_path_length(to_nx(other)))
        snap = []
        for p in ref.nodes:
            d = [math.dist(p, q) for q in other.nodes]
            j = int(np.argmin(d))
            snap.append(j if d[j] <= radius else None)
        terms = []
        for a in range(ref.n_nodes):
            for b in range(a + 1, ref.n_nodes):
                L = R[a].get(b)
                sa, sb = snap[a], snap[b]
                L2 = O[sa].get(sb) if sa is not None and sb is not None else None
                if L is not None and L2 is not None:
                    terms.append(1 - min(1, abs(L - L2) / max(L, L2)))
                elif L is not None or L2 is not None:
                    terms.append(0.0)
        return terms

    f, b = direction(gt, prop), direction(prop, gt)
    if not f and not b:
        return 1.0
    return 0.5 * sum(sum(t) / len(t) if t else 0.0 for t in (f, b))


def test_iou_f1_examples():
    a = line(4, 4, [0, 1], [0, 1])
    assert iou_f1(a, a) == (1.0, 1.0)
    assert iou_f1(a, line(4, 4, [3], [3])) == (0.0, 0.0)
    gt = np.zeros((2, 5), np.uint8) + 1
    pred = gt.copy()
    pred[1] = 0
    iou, f1 = iou_f1(pred, gt)
    assert iou == 0.5 and f1 == pytest.approx(2 / 3)
    z = np.zeros((3, 3), np.uint8)
    assert iou_f1(z, z) == (1.0, 1.0)
    with pytest.raises(UsageError):
        iou_f1(z, np.zeros((3, 4), np.uint8))


def test_iou_f1_counting_oracle():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        p, g = rng.integers(0, 2, (2, 6, 6))
        tp = sum(1 for x, y in zip(p.flat, g.flat) if x and y)
        fp = sum(1 for x, y in zip(p.flat, g.flat) if x and not y)
        fn = sum(1 for x, y in zip(p.flat, g.flat) if y and not x)
        iou, f1 = iou_f1(p, g)
        if tp + fp + fn == 0:
            assert (iou, f1) == (1.0, 1.0)
        else:
            assert iou == tp / (tp + fp + fn)
            assert f1 == 2 * tp / (2 * tp + fp + fn)


def test_extract_line():
    g = extract_graph(line(3, 7, [1] * 5, range(1, 6)))
    assert g.n_nodes == 2 and len(g.edges) == 1 and g.edges[0][2] == 4


def test_extract_plus():
    m = line(7, 7, [3] * 5, range(1, 6)) | line(7, 7, range(1, 6), [3] * 5)
    g = extract_graph(m)
    assert g.n_nodes == 5 and len(g.edges) == 4
    assert all(e[2] == 2 for e in g.edges)


def test_extract_ring():
    m = np.zeros((7, 7), np.uint8)
    m[1:6, 1:6] = 1
    m[2:5, 2:5] = 0
    g = extract_graph(m)
    assert g.n_nodes == 1 and g.edges == [(0, 0, 16.0)]


def test_extract_diagonal_lengths():
    g = extract_graph(line(6, 6, range(5), range(5)))
    assert g.n_nodes == 2 and g.edges[0][2] == pytest.approx(4 * math.sqrt(2))


def test_extract_empty():
    g = extract_graph(np.zeros((4, 4), np.uint8))
    assert g.n_nodes == 0 and g.edges == []


@pytest.mark.parametrize("seed", range(30))
def test_edge_lengths_match_pixel_traversal(seed):
    # brute-force tracer: every kept pixel link is walked exactly once
    skel = skeletonize(random_blob(np.random.default_rng(seed), 32, 32)).astype(bool)
    h, w = skel.shape
    total = 0.0
    for r in range(h):
        for c in range(w):
            if not skel[r, c]:
                continue
            for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w and skel[rr, cc]):
                    continue
                if dr and dc and (skel[r, cc] or skel[rr, c]):
                    continue
                total += math.sqrt(2) if dr and dc else 1.0
    assert extract_graph(skel).total_length() == pytest.approx(total)


def test_apls_examples():
    g = RoadGraph([(0, 0), (0, 10)], [(0, 1, 10.0)])
    assert apls(g, g) == 1.0
    assert apls(g, RoadGraph()) == 0.0
    assert apls(RoadGraph(), RoadGraph()) == 1.0
    p = RoadGraph([(0, 0), (0, 10)], [(0, 1, 8.0)])
    assert apls(g, p) == pytest.approx(0.8)
    with pytest.raises(UsageError):
        apls(g, p, snap_radius=0)


def random_graph(rng):
    skel = skeletonize(random_blob(rng, 24, 24))
    return extract_graph(skel)


@pytest.mark.parametrize("seed", range(25))
def test_apls_against_oracle_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = random_graph(rng), random_graph(rng)
    assert apls(a, b) == pytest.approx(apls_oracle(a, b, 4.0), abs=1e-12)
    assert apls(a, b) == pytest.approx(apls(b, a), abs=1e-12)
    assert apls(a, a) == 1.0
    assert 0.0 <= apls(a, b) <= 1.0


@pytest.mark.parametrize("seed", range(25))
def test_apls_edge_deletion_is_monotone(seed):
    # degrade a perfect proposal one random edge at a time
    rng = np.random.default_rng(100 + seed)
    gt = random_graph(rng)
    prop, score = gt, 1.0
    for _ in range(len(gt.edges)):
        prop = prop.without_edge(int(rng.integers(len(prop.edges))))
        new = apls(gt, prop)
        assert new <= score + 1e-12
        score = new


def test_graph_text_round_trip():
    g = extract_graph(skeletonize(random_blob(np.random.default_rng(5), 30, 30)))
    back = RoadGraph.from_text(g.to_text())
    assert back.nodes == g.nodes
    assert [(a, b) for a, b, _ in back.edges] == [(a, b) for a, b, _ in g.edges]
    np.testing.assert_allclose([e[2] for e in back.edges], [e[2] for e in g.edges])


@pytest.mark.parametrize(
    "text",
    ["", "nodes 1 edges 0\n", "nodes x edges 0\n", "nodes 2 edges 1\n0 0\n0 1\n0 5 1.0\n", "nodes 1 edges 0\n0\n"],
)
def test_graph_text_errors(text):
    with pytest.raises(FormatError):
        RoadGraph.from_text(text)


@settings(max_examples=60, deadline=None)
@given(masks, masks)
def test_evaluate_bounds(p, g):
    r = evaluate(p, g)
    for v in r.as_dict().values():
        assert 0.0 <= v <= 1.0
    assert mask_apls(g, g) == 1.0

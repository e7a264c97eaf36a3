"""Segmentation and topology metrics: IoU, F1, road-graph extraction, APLS."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from ._validation import check_binary_mask, check_same_shape
from .exceptions import FormatError, UsageError
from .skeleton import skeletonize

SQRT2 = math.sqrt(2.0)


@dataclass
class RoadGraph:
    """Undirected graph with pixel-coordinate nodes and weighted edges.

    ``edges`` holds ``(a, b, length)`` triples; ``a == b`` is a self-loop.
    """

    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.nodes)
        for a, b, length in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise UsageError(f"edge ({a}, {b}) references a missing node")
            if not length > 0:
                raise UsageError(f"edge ({a}, {b}) has non-positive length {length}")

    @property
    def n_nodes(self):
        return len(self.nodes)

    def total_length(self):
        return math.fsum(e[2] for e in self.edges)

    def shortest_paths(self):
        """All-pairs shortest path lengths; ``inf`` for disconnected pairs."""
        n = self.n_nodes
        if n == 0:
            return np.zeros((0, 0))
        rows, cols, vals = [], [], []
        for a, b, length in self.edges:
            if a == b:
                continue
            rows += [a, b]
            cols += [b, a]
            vals += [length, length]
        # csgraph keeps the minimum when duplicate entries are summed, so
        # collapse parallel edges explicitly
        best = {}
        for r, c, v in zip(rows, cols, vals):
            if v < best.get((r, c), math.inf):
                best[(r, c)] = v
        if best:
            (r, c), v = zip(*best.keys()), list(best.values())
            adj = coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
        else:
            adj = coo_matrix((n, n)).tocsr()
        return dijkstra(adj, directed=False)

    def without_edge(self, index):
        return RoadGraph(list(self.nodes), [e for i, e in enumerate(self.edges) if i != index])

    def to_text(self):
        lines = [f"nodes {len(self.nodes)} edges {len(self.edges)}"]
        lines += [f"{r} {c}" for r, c in self.nodes]
        lines += [f"{a} {b} {length!r}" for a, b, length in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        try:
            head = lines[0].split()
            if len(head) != 4 or head[0] != "nodes" or head[2] != "edges":
                raise FormatError("bad graph header, expected 'nodes N edges E'")
            n, e = int(head[1]), int(head[3])
            if len(lines) != 1 + n + e:
                raise FormatError(f"graph body has {len(lines) - 1} lines, expected {n + e}")
            nodes = []
            for ln in lines[1 : 1 + n]:
                r, c = ln.split()
                nodes.append((int(r), int(c)))
            edges = []
            for ln in lines[1 + n :]:
                a, b, length = ln.split()
                edges.append((int(a), int(b), float(length)))
        except (IndexError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed graph text: {exc}") from None
        try:
            return cls(nodes, edges)
        except UsageError as exc:
            raise FormatError(str(exc)) from None


@dataclass
class MetricReport:
    iou: float
    f1: float
    apls: float

    def as_dict(self):
        return asdict(self)


def iou_f1(pred, gt):
    """Pixel IoU and F1 of two binary masks (both 1.0 when both are empty)."""
    pred = check_binary_mask(pred, "pred").astype(bool)
    gt = check_binary_mask(gt, "gt").astype(bool)
    check_same_shape(pred, gt, names=["pred", "gt"])
    inter = int(np.count_nonzero(pred & gt))
    union = int(np.count_nonzero(pred | gt))
    total = int(np.count_nonzero(pred)) + int(np.count_nonzero(gt))
    if total == 0:
        return 1.0, 1.0
    return inter / union, 2.0 * inter / total


# Forward half of the 8-neighborhood; each unordered pixel pair is seen once.
_FORWARD = ((0, 1), (1, -1), (1, 0), (1, 1))


def skeleton_adjacency(skel):
    """Adjacency used for graph tracing.

    Pixels are 8-adjacent, except that a diagonal link is dropped when the
    two pixels share a foreground 4-neighbor: the two orthogonal links already
    join them, and keeping the diagonal would turn every corner into a
    junction.
    Returns a dict mapping each foreground pixel to its neighbor list.
    """
    skel = np.asarray(skel, dtype=bool)
    h, w = skel.shape
    adj = {p: [] for p in zip(*np.nonzero(skel))}
    for (r, c) in adj:
        for dr, dc in _FORWARD:
            rr, cc = r + dr, c + dc
            if not (0 <= rr < h and 0 <= cc < w and skel[rr, cc]):
                continue
            if dr != 0 and dc != 0 and (skel[r, cc] or skel[rr, c]):
                continue
            adj[(r, c)].append((rr, cc))
            adj[(rr, cc)].append((r, c))
    for p in adj:
        adj[p].sort()
    return adj


def _step(p, q):
    return SQRT2 if p[0] != q[0] and p[1] != q[1] else 1.0


def extract_graph(skeleton):
    """Convert a thin skeleton into a :class:`RoadGraph`.

    Nodes are pixels whose degree is not 2 (endpoints, junctions), in raster
    order. Edges follow chains of degree-2 pixels between nodes, with step
    lengths 1 (orthogonal) and sqrt(2) (diagonal). A cycle without any node
    gets one node at its first pixel in raster order and a self-loop.
    Non-thin input is skeletonized first.
    """
    skel = check_binary_mask(skeleton, "skeleton")
    if (skel[:-1, :-1] & skel[1:, :-1] & skel[:-1, 1:] & skel[1:, 1:]).any():
        skel = skeletonize(skel)
    adj = skeleton_adjacency(skel)
    pixels = sorted(adj)
    node_pixels = [p for p in pixels if len(adj[p]) != 2]
    index = {p: i for i, p in enumerate(node_pixels)}
    nodes = list(node_pixels)
    edges = []
    visited = set()

    def trace(start, first):
        # walk from node/anchor `start` through `first` until a node is hit
        length = _step(start, first)
        prev, cur = start, first
        while cur not in index:
            visited.add(cur)
            a, b = adj[cur]
            nxt = b if a == prev else a
            length += _step(cur, nxt)
            prev, cur = cur, nxt
        return index[cur], length

    for p in node_pixels:
        for q in adj[p]:
            if q in index:
                if index[p] < index[q]:
                    edges.append((index[p], index[q], _step(p, q)))
            elif q not in visited:
                end, length = trace(p, q)
                edges.append((index[p], end, length))

    for p in pixels:
        if p in index or p in visited:
            continue
        # isolated cycle made only of degree-2 pixels
        index[p] = len(nodes)
        nodes.append(p)
        end, length = trace(p, adj[p][0])
        edges.append((index[p], end, length))

    return RoadGraph([(int(r), int(c)) for r, c in nodes], edges)


def _snap(ref_nodes, other_nodes, radius):
    """Index of the nearest other node within ``radius`` (-1 if none).

    Ties resolve to the lowest index.
    """
    if len(ref_nodes) == 0:
        return np.zeros(0, dtype=int)
    if len(other_nodes) == 0:
        return np.full(len(ref_nodes), -1)
    ref = np.asarray(ref_nodes, dtype=float)
    other = np.asarray(other_nodes, dtype=float)
    dist = np.sqrt(((ref[:, None, :] - other[None, :, :]) ** 2).sum(-1))
    idx = dist.argmin(axis=1)
    return np.where(dist[np.arange(len(ref)), idx] <= radius, idx, -1)


def _directional(ref, other, radius):
    """Path-length similarity terms of ``other`` measured against ``ref``.

    A reference node pair is scored when it is connected in either graph;
    a connection present on one side only scores 0.
    """
    ref_d = ref.shortest_paths()
    other_d = other.shortest_paths()
    snapped = _snap(ref.nodes, other.nodes, radius)
    terms = []
    n = ref.n_nodes
    for a in range(n):
        for b in range(a + 1, n):
            length = ref_d[a, b]
            sa, sb = snapped[a], snapped[b]
            other_len = other_d[sa, sb] if sa >= 0 and sb >= 0 else math.inf
            if math.isfinite(length) and math.isfinite(other_len):
                terms.append(1.0 - min(1.0, abs(length - other_len) / max(length, other_len)))
            elif math.isfinite(length) or math.isfinite(other_len):
                terms.append(0.0)
    return terms


def apls(gt, prop, snap_radius=4.0):
    """Symmetric Average Path Length Similarity of two road graphs.

    Each direction snaps reference nodes to the nearest node of the other
    graph within ``snap_radius`` and scores every reference node pair with a
    finite path length ``L`` by ``1 - min(1, |L - L'| / max(L, L'))``, where
    ``L'`` is the path between the snapped nodes; unmatched nodes and missing
    paths score 0. Pairs connected only in the other graph also score 0, so
    removing edges from a proposal can only lower the score. Normalizing by
    the longer path makes the score symmetric in the two graphs. The result is the mean of the two directional means. A
    direction without any scored pair counts as 0 unless neither direction
    has one, in which case the score is 1.
    """
    if not snap_radius > 0:
        raise UsageError(f"snap_radius must be > 0, got {snap_radius}")
    if gt.n_nodes == 0 and prop.n_nodes == 0:
        return 1.0
    if gt.n_nodes == 0 or prop.n_nodes == 0:
        return 0.0
    fwd = _directional(gt, prop, snap_radius)
    bwd = _directional(prop, gt, snap_radius)
    if not fwd and not bwd:
        return 1.0
    scores = [math.fsum(t) / len(t) if t else 0.0 for t in (fwd, bwd)]
    return 0.5 * (scores[0] + scores[1])


def mask_apls(pred, gt, snap_radius=4.0):
    """APLS between two masks via skeletonization and graph extraction."""
    return apls(
        extract_graph(skeletonize(gt)), extract_graph(skeletonize(pred)), snap_radius
    )


def evaluate(pred, gt, snap_radius=4.0, gt_skeleton=None):
    """MetricReport for one predicted mask against its ground truth."""
    iou, f1 = iou_f1(pred, gt)
    gt_graph = extract_graph(skeletonize(gt) if gt_skeleton is None else gt_skeleton)
    score = apls(gt_graph, extract_graph(skeletonize(pred)), snap_radius)
    return MetricReport(iou=iou, f1=f1, apls=score)

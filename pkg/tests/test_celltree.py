import math

import numpy as np
import pytest

from parakin.celltree import (
    CellBox,
    CellLabel,
    DecompositionConfig,
    LeafBudgetExceeded,
    build_tree,
    build_workspace_tree,
    classify_cell,
    leaf_sign,
)
from parakin.kinematics import WORKING_MODES, WorkingMode, branch_arrays
from parakin.regions import DEFAULT_ROOT


def ball_classifier(centre, radius):
    """Exact labels of the ball indicator, for any dimension."""
    centre = np.asarray(centre)

    def classify(lo, hi, final):
        near = np.clip(centre, lo, hi)
        d_near = np.linalg.norm(near - centre, axis=1)
        far = np.where(np.abs(lo - centre) > np.abs(hi - centre), lo, hi)
        d_far = np.linalg.norm(far - centre, axis=1)
        labels = np.full(len(lo), CellLabel.MIXED_BOUNDARY, dtype=np.int8)
        labels[d_far < radius] = CellLabel.FREE
        labels[d_near > radius] = CellLabel.OUTSIDE
        return labels, np.zeros((len(lo), 1))

    return classify


def test_cellbox_validation():
    with pytest.raises(ValueError):
        CellBox((0.0, 0.0), (0.0, 1.0))
    box = CellBox((0.0, 0.0), (3.0, 4.0))
    assert box.diam == 5.0 and box.volume == 12.0 and box.k == 2


def test_config_validation():
    with pytest.raises(ValueError):
        DecompositionConfig(max_depth=0)
    with pytest.raises(ValueError):
        DecompositionConfig(samples_per_axis=1)


def test_max_depth_one_is_single_leaf(geom):
    tree = build_workspace_tree(geom, WorkingMode(1, 1), DEFAULT_ROOT, DecompositionConfig(max_depth=1))
    assert tree.n_leaves == 1
    assert tree.leaf_box(0) == DEFAULT_ROOT


def test_one_split_has_four_quadrant_neighbours():
    root = CellBox((0.0, 0.0), (2.0, 2.0))
    tree = build_tree(root, ball_classifier((1.0, 1.0), 0.5), max_depth=2)
    assert tree.n_leaves == 4
    for leaf in range(4):
        # the diagonal quadrant only touches at a corner
        assert len(tree.neighbors(leaf)) == 2


def test_neighbours_symmetric_and_face_sharing():
    root = CellBox((-1.0, -1.0), (1.0, 1.0))
    tree = build_tree(root, ball_classifier((0.2, -0.1), 0.6), max_depth=6)
    lo, hi = tree.leaf_bounds()
    for a in range(tree.n_leaves):
        for b in tree.neighbors(a):
            assert a in tree.neighbors(b)
            overlap = np.minimum(hi[a], hi[b]) - np.maximum(lo[a], lo[b])
            # touch along one axis, overlap with positive length along the other
            assert np.sum(np.isclose(overlap, 0.0)) == 1 and np.all(overlap > -1e-12)


def test_leaves_partition_root():
    root = CellBox((-1.0, -1.0), (1.0, 1.0))
    tree = build_tree(root, ball_classifier((0.0, 0.0), 0.7), max_depth=7)
    assert tree.leaf_volumes().sum() == pytest.approx(root.volume, rel=1e-12)
    grid = tree.index_grid()
    counts = np.bincount(grid.ravel(), minlength=tree.n_leaves)
    np.testing.assert_array_equal(counts, 4 ** (tree.finest_level - tree.levels))


def test_find_leaf_matches_bounds():
    root = CellBox((-1.0, -1.0), (1.0, 1.0))
    tree = build_tree(root, ball_classifier((0.0, 0.0), 0.7), max_depth=6)
    rng = np.random.default_rng(0)
    lo, hi = tree.leaf_bounds()
    for p in rng.uniform(-1, 1, (300, 2)):
        leaf = tree.find_leaf(p)
        assert np.all(lo[leaf] <= p) and np.all(p < hi[leaf])
    assert tree.find_leaf((1.0, 1.0)) is not None
    assert tree.find_leaf((1.5, 0.0)) is None


def test_three_dimensional_tree():
    root = CellBox((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    tree = build_tree(root, ball_classifier((0.5, 0.5, 0.5), 0.3), max_depth=5)
    assert tree.k == 3
    assert tree.leaf_volumes().sum() == pytest.approx(1.0)
    free = tree.label_volume(CellLabel.FREE)
    mixed = tree.label_volume(CellLabel.MIXED_BOUNDARY)
    ball = 4 / 3 * math.pi * 0.3**3
    assert free < ball < free + mixed
    # every neighbour pair shares a 2-face
    pairs = tree.adjacency_pairs()
    lo, hi = tree.leaf_bounds()
    for a, b in pairs[:200]:
        overlap = np.minimum(hi[a], hi[b]) - np.maximum(lo[a], lo[b])
        assert np.sum(np.isclose(overlap, 0.0)) == 1


def test_leaf_budget_enforced():
    root = CellBox((0.0, 0.0), (1.0, 1.0))
    with pytest.raises(LeafBudgetExceeded):
        build_tree(root, ball_classifier((0.5, 0.5), 0.3), max_depth=8, leaf_budget=100)


def test_deterministic_build(geom):
    cfg = DecompositionConfig(max_depth=6)
    a = build_workspace_tree(geom, WorkingMode(-1, 1), DEFAULT_ROOT, cfg)
    b = build_workspace_tree(geom, WorkingMode(-1, 1), DEFAULT_ROOT, cfg)
    assert a == b


def test_classify_cell_reports_summary(geom):
    box = CellBox((3.0, 6.0), (3.2, 6.2))
    label, summary = classify_cell(geom, WorkingMode(1, 1), box, DecompositionConfig())
    assert label is CellLabel.FREE
    assert summary["n_branch"] == 9
    assert summary["detA_min"] > 0 or summary["detA_max"] < 0


@pytest.mark.parametrize("mi", range(4))
def test_labels_are_conservative(atlas, geom, mi):
    """Free leaves hold the branch with the recorded sign; Outside leaves hold no branch."""
    mode = WORKING_MODES[mi]
    tree = atlas.trees[mi]
    rng = np.random.default_rng(100 + mi)
    pts = rng.uniform(DEFAULT_ROOT.lo, DEFAULT_ROOT.hi, (1000, 2))
    leaves = np.array([tree.find_leaf(p) for p in pts])
    labels = tree.labels[leaves]
    br = branch_arrays(geom, mode, pts[:, 0], pts[:, 1])
    free = labels == CellLabel.FREE
    outside = labels == CellLabel.OUTSIDE
    assert np.all(br.ok[free])
    assert np.all(np.sign(br.det_a[free]) == leaf_sign(tree)[leaves[free]])
    assert not np.any(br.ok[outside])


SYMMETRIC_UP = (3.5, 8.0 + math.sqrt(12.75))


def test_classify_cell_examples(geom):
    cfg = DecompositionConfig(max_depth=8)
    mode = WorkingMode(1, -1)
    assert classify_cell(geom, mode, CellBox((50.0, 50.0), (51.0, 51.0)), cfg)[0] is CellLabel.OUTSIDE
    x, y = SYMMETRIC_UP
    label, summary = classify_cell(geom, mode, CellBox((x - 0.05, y - 0.05), (x + 0.05, y + 0.05)), cfg)
    assert label is CellLabel.FREE and summary["detA_min"] > 0
    # straddles |X - A| = 13
    label, _ = classify_cell(geom, WorkingMode(1, 1), CellBox((4.95, 11.95), (5.05, 12.05)), cfg)
    assert label is CellLabel.SERIAL_BOUNDARY


def test_free_area_monotone_up_to_band(geom):
    trees = [
        build_workspace_tree(geom, WorkingMode(1, 1), DEFAULT_ROOT, DecompositionConfig(max_depth=d))
        for d in (6, 7, 8)
    ]
    for coarse, fine in zip(trees, trees[1:]):
        band = sum(coarse.label_volume(lab) for lab in CellLabel if lab.is_boundary)
        assert fine.label_volume(CellLabel.FREE) >= coarse.label_volume(CellLabel.FREE) - band


def test_free_area_against_dense_oracle(atlas):
    from oracles import aggregate, grid_centres, pointwise_classes

    # a finest cell is Free for the oracle when all its 8x8 samples share one sign
    x, y = grid_centres(1024)
    tree = atlas.tree(WorkingMode(1, 1))
    block = 1024 // tree.finest_shape[0]
    cells = aggregate(pointwise_classes(x, y)[(1, 1)], block)
    reference = float(np.count_nonzero(np.abs(cells) == 1)) * tree.finest_cell_volume
    assert tree.label_volume(CellLabel.FREE) == pytest.approx(reference, rel=0.02)
    # the smallest quadtree over the oracle cells has 1042 leaves; the
    # conservative certificates split a little more
    assert tree.n_leaves == 1192

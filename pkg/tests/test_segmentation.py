import numpy as np
import pytest

from deepcontrast.segmentation import (
    Segment, felzenszwalb_segment, multi_level_segment, segment_saliency_label,
)


def reference_felzenszwalb(image, k, min_size):
    """Sequential reference: stable-sorted edge list over the 8-connected
    grid, adaptive-threshold merging, then a min-size cleanup pass."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    n = h * w
    parent = list(range(n))
    size = [1] * n
    internal = [0.0] * n

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
        return a

    edges = []
    idx = np.arange(n).reshape(h, w)
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        for i in range(h - dy):
            for j in range(max(0, -dx), w - max(0, dx)):
                a, b = idx[i, j], idx[i + dy, j + dx]
                wgt = float(np.linalg.norm(image[i, j] - image[i + dy, j + dx]))
                edges.append((wgt, a, b))
    order = np.argsort([e[0] for e in edges], kind="stable")
    edges = [edges[i] for i in order]
    for wgt, a, b in edges:
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        if (wgt <= internal[ra] + k / size[ra]
                and wgt <= internal[rb] + k / size[rb]):
            r = union(ra, rb)
            internal[r] = wgt
    for wgt, a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb and (size[ra] < min_size or size[rb] < min_size):
            union(ra, rb)
    return np.array([find(i) for i in range(n)]).reshape(h, w)


def same_partition(a, b):
    """True iff the two label maps group pixels identically."""
    fwd, bwd = {}, {}
    for la, lb in zip(a.ravel().tolist(), b.ravel().tolist()):
        if fwd.setdefault(la, lb) != lb or bwd.setdefault(lb, la) != la:
            return False
    return True


def two_region_image(h=8, w=8):
    img = np.zeros((h, w, 3))
    img[:, w // 2:] = 200.0
    return img


class TestFelzenszwalb:
    def test_uniform_image_single_segment(self):
        level = felzenszwalb_segment(np.full((6, 6, 3), 40.0), k=10,
                                     min_size=1, sigma=0)
        assert level.num_segments == 1
        assert level.segments[0].size == 36

    def test_two_regions_split(self):
        level = felzenszwalb_segment(two_region_image(), k=30, min_size=1,
                                     sigma=0)
        assert level.num_segments == 2
        labels = level.label_map
        assert (labels[:, :4] == labels[0, 0]).all()
        assert (labels[:, 4:] == labels[0, 4]).all()
        assert labels[0, 0] != labels[0, 4]

    def test_huge_k_merges_everything(self, rng):
        img = rng.uniform(0, 255, size=(8, 8, 3))
        level = felzenszwalb_segment(img, k=1e9, min_size=1, sigma=0)
        assert level.num_segments == 1

    def test_labels_contiguous_rowmajor(self, rng):
        img = rng.uniform(0, 255, size=(10, 10, 3))
        level = felzenszwalb_segment(img, k=50, min_size=2, sigma=0.5)
        labels = level.label_map
        assert labels.min() == 0
        assert labels.max() == level.num_segments - 1
        # first occurrence of each label in row-major order is increasing
        flat = labels.ravel()
        firsts = [np.argmax(flat == sid) for sid in range(level.num_segments)]
        assert firsts == sorted(firsts)

    def test_partition_and_bboxes(self, rng):
        img = rng.uniform(0, 255, size=(9, 11, 3))
        level = felzenszwalb_segment(img, k=80, min_size=3, sigma=0.8)
        total = 0
        for seg in level.segments:
            total += seg.size
            r, c = seg.pixels[:, 0], seg.pixels[:, 1]
            assert (level.label_map[r, c] == seg.id).all()
            assert seg.bbox == (r.min(), r.max(), c.min(), c.max())
        assert total == 9 * 11

    def test_min_size_enforced(self, rng):
        img = rng.uniform(0, 255, size=(12, 12, 3))
        level = felzenszwalb_segment(img, k=20, min_size=6, sigma=0)
        assert all(seg.size >= 6 for seg in level.segments)

    def test_adjacency_matches_brute_force(self, rng):
        img = rng.uniform(0, 255, size=(10, 10, 3))
        level = felzenszwalb_segment(img, k=60, min_size=2, sigma=0.5)
        labels = level.label_map
        expected = {sid: set() for sid in range(level.num_segments)}
        h, w = labels.shape
        for i in range(h):
            for j in range(w):
                for ni, nj in ((i + 1, j), (i, j + 1)):
                    if ni < h and nj < w and labels[ni, nj] != labels[i, j]:
                        expected[labels[i, j]].add(labels[ni, nj])
                        expected[labels[ni, nj]].add(labels[i, j])
        for seg in level.segments:
            assert seg.neighbor_ids == expected[seg.id]

    @pytest.mark.parametrize("trial", range(5))
    def test_matches_sequential_reference(self, trial):
        rng = np.random.default_rng(400 + trial)
        img = rng.uniform(0, 255, size=(7, 8, 3))
        k = float(rng.uniform(20, 200))
        min_size = int(rng.integers(1, 6))
        level = felzenszwalb_segment(img, k=k, min_size=min_size, sigma=0)
        ref = reference_felzenszwalb(img, k, min_size)
        assert same_partition(level.label_map, ref)

    def test_deterministic(self, rng):
        img = rng.uniform(0, 255, size=(10, 10, 3))
        a = felzenszwalb_segment(img, k=50, min_size=2, sigma=0.5)
        b = felzenszwalb_segment(img, k=50, min_size=2, sigma=0.5)
        np.testing.assert_array_equal(a.label_map, b.label_map)

    def test_grayscale_input(self):
        img = np.zeros((6, 6))
        img[:, 3:] = 200.0
        level = felzenszwalb_segment(img, k=30, min_size=1, sigma=0)
        assert level.num_segments == 2

    def test_empty_image_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            felzenszwalb_segment(np.zeros((0, 5, 3)), k=10, min_size=1, sigma=0)


class TestMultiLevel:
    def test_three_levels_decreasing_granularity(self, rng):
        img = rng.uniform(0, 255, size=(16, 16, 3))
        levels = multi_level_segment(img, [(20, 2, 0.5), (80, 4, 0.8),
                                           (300, 8, 1.0)])
        assert len(levels) == 3
        counts = [lvl.num_segments for lvl in levels]
        assert counts[0] >= counts[1] >= counts[2]

    def test_rejects_wrong_count(self):
        with pytest.raises(ValueError, match="3 level"):
            multi_level_segment(np.zeros((4, 4, 3)), [(10, 1, 0)])

    def test_rejects_decreasing_k(self):
        with pytest.raises(ValueError, match="non-decreasing"):
            multi_level_segment(np.zeros((4, 4, 3)),
                                [(100, 1, 0), (50, 1, 0), (200, 1, 0)])


class TestSaliencyLabel:
    def make_segment(self, pixels):
        pix = np.array(pixels)
        return Segment(id=0, pixels=pix,
                       bbox=(pix[:, 0].min(), pix[:, 0].max(),
                             pix[:, 1].min(), pix[:, 1].max()))

    def test_majority_positive(self):
        gt = np.zeros((4, 4))
        gt[0, :3] = 1
        seg = self.make_segment([(0, 0), (0, 1), (0, 2), (0, 3)])
        assert segment_saliency_label(seg, gt) == 1

    def test_exact_half_is_negative(self):
        gt = np.zeros((2, 2))
        gt[0, 0] = 1
        seg = self.make_segment([(0, 0), (0, 1)])
        assert segment_saliency_label(seg, gt) == 0

    def test_all_background(self):
        seg = self.make_segment([(1, 1), (1, 2)])
        assert segment_saliency_label(seg, np.zeros((3, 3))) == 0

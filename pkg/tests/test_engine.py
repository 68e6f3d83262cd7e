import numpy as np
import pytest

from shapey.dataset import VT
from shapey.engine import (
    TileConfig,
    get_backend,
    group_best,
    masked_topk,
    pairwise_scores,
    tuning_curve,
)
from shapey.store import EmbeddingStore, normalize
from shapey.synth import SyntheticConfig, generate


def make_store(rows):
    rows = np.asarray(rows, dtype=np.float32)
    ids = tuple(f"row_{k:04d}" for k in range(rows.shape[0]))
    return normalize(EmbeddingStore(rows, ids))


def random_store(n, dim, seed):
    rng = np.random.default_rng(seed)
    return make_store(rng.standard_normal((n, dim)))


def naive_topk(store, ref_row, mask_rows, k):
    """Scalar-reference top-k: python floats, explicit sort on (score, row)."""
    ref = store.rows[ref_row].astype(np.float64)
    scored = []
    for r in mask_rows:
        s = float(np.dot(store.rows[r].astype(np.float64), ref))
        scored.append((-s, r))
    scored.sort()
    return [(r, -negs) for negs, r in scored[:k]]


class TestMaskedTopK:
    def test_self_similarity(self, backend):
        store = random_store(50, 8, 0)
        [res] = masked_topk(store, [7], [np.arange(50)], k=1, backend=backend)
        assert res.rows[0] == 7
        assert abs(res.scores[0] - 1.0) < 1e-6

    def test_hand_geometry(self, backend):
        store = make_store([[1, 0], [0, 1], [-1, 0]])
        [res] = masked_topk(store, [0], [np.arange(3)], k=3, backend=backend)
        assert res.rows.tolist() == [0, 1, 2]
        np.testing.assert_allclose(res.scores, [1.0, 0.0, -1.0], atol=1e-6)

    def test_tie_break_lower_row_first(self, backend):
        store = make_store([[1, 0], [0.6, 0.8], [0.6, 0.8], [0, 1]])
        [res] = masked_topk(store, [0], [np.array([1, 2, 3])], k=2, backend=backend)
        assert res.rows.tolist() == [1, 2]  # identical rows, lower index first

    def test_empty_mask(self, backend):
        store = random_store(10, 4, 1)
        [res] = masked_topk(store, [0], [np.array([], dtype=np.int64)], k=3, backend=backend)
        assert res.rows.size == 0 and res.scores.size == 0

    def test_k_below_one_rejected(self, backend):
        store = random_store(10, 4, 1)
        with pytest.raises(ValueError):
            masked_topk(store, [0], [np.arange(10)], k=0, backend=backend)

    def test_requires_normalized(self):
        store = EmbeddingStore(np.ones((4, 2), np.float32), ("a", "b", "c", "d"))
        with pytest.raises(ValueError, match="normalized"):
            masked_topk(store, [0], [np.arange(4)], k=1)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_naive_scan(self, backend, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 400))
        store = random_store(n, int(rng.integers(2, 24)), seed + 100)
        refs = rng.integers(0, n, size=4).tolist()
        masks, k = [], int(rng.integers(1, 8))
        for _ in refs:
            size = int(rng.integers(0, n))
            masks.append(rng.choice(n, size=size, replace=False))
        results = masked_topk(store, refs, masks, k=k, backend=backend)
        for ref, mask, res in zip(refs, masks, results):
            expect = naive_topk(store, ref, sorted(mask.tolist()), k)
            assert res.rows.tolist() == [r for r, _ in expect]
            np.testing.assert_allclose(
                res.scores, [s for _, s in expect], rtol=0, atol=1e-9
            )

    def test_bool_mask_accepted(self, backend):
        store = random_store(30, 4, 9)
        mask = np.zeros(30, dtype=bool)
        mask[[3, 4, 5]] = True
        [res] = masked_topk(store, [0], [mask], k=2, backend=backend)
        assert set(res.rows.tolist()) <= {3, 4, 5}


class TestPairwiseScores:
    def test_diagonal_ones(self, backend):
        store = random_store(12, 6, 3)
        block = pairwise_scores(store, range(12), range(12), backend=backend)
        np.testing.assert_allclose(np.diag(block), 1.0, atol=1e-6)

    def test_orthogonal_zero(self, backend):
        store = make_store(np.eye(4))
        block = pairwise_scores(store, [0, 1], [2, 3], backend=backend)
        np.testing.assert_allclose(block, 0.0, atol=1e-6)

    def test_matches_scalar_loop(self, backend):
        store = random_store(8, 16, 4)
        block = pairwise_scores(store, [0, 1, 2, 3, 4], [5, 6, 7], backend=backend)
        for i, a in enumerate([0, 1, 2, 3, 4]):
            for j, b in enumerate([5, 6, 7]):
                acc = 0.0
                for d in range(16):
                    acc += float(store.rows[a, d]) * float(store.rows[b, d])
                assert abs(block[i, j] - acc) < 1e-6


class TestTileIndependence:
    def test_group_best_bit_identical(self, backend):
        store = random_store(700, 32, 5)
        segments = np.array([[0, 341], [341, 682], [682, 700]])
        ref_rows = np.arange(0, 700, 13)
        configs = [
            TileConfig(),
            TileConfig(ref_tile=1, cand_tile=1),
            TileConfig(ref_tile=7, cand_tile=100),
            TileConfig(ref_tile=64, cand_tile=5000, workers=4),
            TileConfig(ref_tile=3, cand_tile=350, workers=8),
        ]
        outs = [group_best(store, ref_rows, segments, tile=t, backend=backend) for t in configs]
        for best, rows in outs[1:]:
            assert np.array_equal(best, outs[0][0])  # bit-identical scores
            assert np.array_equal(rows, outs[0][1])

    def test_masked_topk_bit_identical(self, backend):
        store = random_store(500, 16, 6)
        mask = np.arange(0, 500, 3)
        outs = []
        for t in [TileConfig(), TileConfig(cand_tile=1), TileConfig(cand_tile=17, workers=4)]:
            [res] = masked_topk(store, [11], [mask], k=9, tile=t, backend=backend)
            outs.append(res)
        for res in outs[1:]:
            assert np.array_equal(res.scores, outs[0].scores)
            assert res.rows.tolist() == outs[0].rows.tolist()

    def test_backends_agree_closely(self):
        backends = {name: get_backend(name) for name in ("python",)}
        try:
            backends["native"] = get_backend("native")
        except Exception:
            pytest.skip("native backend not built")
        store = random_store(200, 64, 7)
        blocks = {
            name: pairwise_scores(store, range(50), range(200), backend=b)
            for name, b in backends.items()
        }
        diff = np.abs(blocks["python"] - blocks["native"]).max()
        assert diff < 1e-12


class TestGroupBest:
    def test_matches_naive(self, backend):
        store = random_store(300, 8, 8)
        segments = np.array([[0, 100], [100, 150], [150, 300]])
        best, best_row = group_best(store, [5, 200], segments, backend=backend)
        rows64 = store.rows.astype(np.float64)
        for i, ref in enumerate([5, 200]):
            scores = rows64 @ rows64[ref]
            for g, (s, e) in enumerate(segments):
                seg_scores = scores[s:e]
                top = seg_scores.max()
                expect_row = s + int(np.flatnonzero(seg_scores == top)[0])
                assert abs(best[i, g] - top) < 1e-9
                assert best_row[i, g] == expect_row

    def test_empty_segment(self, backend):
        store = random_store(50, 4, 9)
        segments = np.array([[0, 25], [25, 25], [25, 50]])
        best, best_row = group_best(store, [0], segments, backend=backend)
        assert best[0, 1] == float("-inf") and best_row[0, 1] == -1

    def test_duplicate_rows_tie_to_lower(self, backend):
        rows = np.ones((6, 3), np.float32)
        store = make_store(rows)
        best, best_row = group_best(store, [0], np.array([[0, 6]]), backend=backend)
        assert best_row[0, 0] == 0


class TestTuningCurve:
    def test_diagonal_and_symmetry(self, backend, tiny_random):
        store, manifest = tiny_random
        m = tuning_curve(store, manifest, "airplane_01", VT.parse("pr"), backend=backend)
        assert m.shape == (11, 11)
        np.testing.assert_allclose(np.diag(m), 1.0, atol=1e-6)
        assert np.abs(m - m.T).max() < 1e-6

    def test_tuned_decay_matches_target(self, backend):
        store, manifest = generate(SyntheticConfig(mode="tuned-decay", seed=3, lam=0.7))
        store = normalize(store)
        m = tuning_curve(store, manifest, manifest.object_names[2], VT.parse("xw"), backend=backend)
        idx = np.arange(11)
        target = np.exp(-0.7 * np.abs(idx[:, None] - idx[None, :]))
        assert np.abs(m - target).max() < 1e-5

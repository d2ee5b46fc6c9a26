import numpy as np
import pytest

from helpers import TINY_SIZE, tiny_model, tiny_records
from oracles import map_cmc_reference, retrieval_reference
from pedmae import (
    FeatureMatrix,
    compute_cmc_map,
    extract_features,
    format_report,
    load_feature_matrix,
    save_feature_matrix,
)


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _random_instance(rng, n_query=None, n_gallery=None, dim=8):
    nq = n_query or int(rng.integers(1, 10))
    ng = n_gallery or int(rng.integers(2, 30))
    q = FeatureMatrix(
        features=_unit_rows(rng, nq, dim),
        identity_ids=rng.integers(0, 4, nq),
        camera_ids=rng.integers(0, 3, nq),
    )
    g = FeatureMatrix(
        features=_unit_rows(rng, ng, dim),
        identity_ids=rng.integers(0, 4, ng),
        camera_ids=rng.integers(0, 3, ng),
    )
    return q, g


def _has_valid_query(q, g):
    for qid, qcam in zip(q.identity_ids, q.camera_ids):
        ok = ((g.identity_ids == qid) & ((g.identity_ids != qid) | (g.camera_ids != qcam))).any()
        if ok:
            return True
    return False


class TestFeatureMatrix:
    def test_validates_unit_norms(self):
        rng = np.random.default_rng(0)
        feats = _unit_rows(rng, 4, 8)
        fm = FeatureMatrix(feats, np.arange(4), np.zeros(4, dtype=int))
        assert fm.features.dtype == np.float64
        with pytest.raises(ValueError, match="unit"):
            FeatureMatrix(feats * 2.0, np.arange(4), np.zeros(4, dtype=int))

    def test_validates_shapes(self):
        rng = np.random.default_rng(0)
        feats = _unit_rows(rng, 4, 8)
        with pytest.raises(ValueError):
            FeatureMatrix(feats, np.arange(3), np.zeros(4, dtype=int))
        with pytest.raises(ValueError):
            FeatureMatrix(feats[0], np.arange(1), np.zeros(1, dtype=int))


class TestExtractFeatures:
    def test_shapes_norms_and_determinism(self):
        model = tiny_model()
        records = tiny_records(5)
        fm1 = extract_features(model.online, records, TINY_SIZE)
        fm2 = extract_features(model.online, records, TINY_SIZE, batch_size=2)
        assert fm1.features.shape == (5, 16)
        assert np.allclose(np.linalg.norm(fm1.features, axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(fm1.features, fm2.features, atol=1e-6)
        assert fm1.identity_ids.tolist() == [r.identity_id for r in records]
        assert fm1.camera_ids.tolist() == [r.camera_id for r in records]

    def test_duplicate_images_get_identical_rows(self):
        model = tiny_model()
        records = tiny_records(2)
        doubled = records + records
        fm = extract_features(model.online, doubled, TINY_SIZE)
        np.testing.assert_array_equal(fm.features[:2], fm.features[2:])


class TestRetrievalMetrics:
    def test_hand_worked_average_precision(self):
        # relevant items land at ranks 1 and 3 of 5: AP = (1/1 + 2/3) / 2
        q = FeatureMatrix(np.array([[1.0, 0.0]]), np.array([7]), np.array([0]))
        gal_feats = np.array([
            [1.0, 0.0],        # rank 1, relevant
            [0.9, np.sqrt(1 - 0.81)],   # rank 2, wrong id
            [0.8, np.sqrt(1 - 0.64)],   # rank 3, relevant
            [0.7, np.sqrt(1 - 0.49)],   # rank 4
            [0.6, np.sqrt(1 - 0.36)],   # rank 5
        ])
        g = FeatureMatrix(gal_feats, np.array([7, 1, 7, 2, 3]),
                          np.array([1, 0, 1, 0, 0]))
        report = compute_cmc_map(q, g, max_rank=5)
        assert abs(report.map_score - (1.0 + 2.0 / 3.0) / 2.0) < 1e-4
        assert report.cmc[0] == 1.0

    def test_same_identity_same_camera_is_junk(self):
        q = FeatureMatrix(np.array([[1.0, 0.0]]), np.array([5]), np.array([2]))
        gal = FeatureMatrix(
            np.array([[1.0, 0.0], [0.0, 1.0]]),
            np.array([5, 5]),
            np.array([2, 0]),  # first is same-cam junk despite rank 1
        )
        report = compute_cmc_map(q, gal, max_rank=2)
        assert report.map_score == 1.0  # junk removed, true match promoted
        assert report.cmc[0] == 1.0

    def test_matches_reference_on_random_instances(self):
        import warnings

        rng = np.random.default_rng(123)
        checked = 0
        for _ in range(200):
            q, g = _random_instance(rng)
            if not _has_valid_query(q, g):
                continue
            max_rank = min(10, len(g.identity_ids))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # some queries may be skipped
                report = compute_cmc_map(q, g, max_rank=max_rank)
            ref_map, ref_cmc, _ = map_cmc_reference(
                q.features @ g.features.T,
                q.identity_ids, q.camera_ids, g.identity_ids, g.camera_ids, max_rank)
            assert abs(report.map_score - ref_map) < 1e-12
            np.testing.assert_allclose(report.cmc, ref_cmc, atol=1e-12)
            checked += 1
        assert checked > 100

    def test_skipped_query_warns(self):
        q = FeatureMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]),
                          np.array([1, 99]), np.array([0, 0]))
        gal = FeatureMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]),
                            np.array([1, 2]), np.array([1, 1]))
        with pytest.warns(UserWarning, match="no relevant gallery"):
            report = compute_cmc_map(q, gal, max_rank=2)
        assert report.skipped_queries == [1]
        assert report.map_score == 1.0

    def test_all_queries_skipped_is_an_error(self):
        q = FeatureMatrix(np.array([[1.0, 0.0]]), np.array([42]), np.array([0]))
        gal = FeatureMatrix(np.array([[1.0, 0.0]]), np.array([1]), np.array([0]))
        with pytest.warns(UserWarning), pytest.raises(ValueError, match="skipped"):
            compute_cmc_map(q, gal, max_rank=1)

    def test_cmc_is_nondecreasing_and_bounded(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            q, g = _random_instance(rng, n_query=6, n_gallery=20)
            if not _has_valid_query(q, g):
                continue
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                report = compute_cmc_map(q, g, max_rank=10)
            assert all(a <= b + 1e-15 for a, b in zip(report.cmc, report.cmc[1:]))
            assert 0.0 <= report.cmc[0] <= report.cmc[-1] <= 1.0
            assert 0.0 <= report.map_score <= 1.0

    def test_rotation_invariance(self):
        rng = np.random.default_rng(11)
        q, g = _random_instance(rng, n_query=5, n_gallery=20, dim=8)
        if not _has_valid_query(q, g):
            pytest.skip("unlucky draw")
        basis, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        rotate = lambda fm: FeatureMatrix(
            fm.features @ basis / np.linalg.norm(fm.features @ basis, axis=1, keepdims=True),
            fm.identity_ids, fm.camera_ids)
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = compute_cmc_map(q, g, max_rank=10)
            b = compute_cmc_map(rotate(q), rotate(g), max_rank=10)
        assert abs(a.map_score - b.map_score) < 1e-9
        np.testing.assert_allclose(a.cmc, b.cmc, atol=1e-12)

    def test_appending_bottom_ranked_distractor_never_helps(self):
        rng = np.random.default_rng(5)
        q, g = _random_instance(rng, n_query=4, n_gallery=10)
        if not _has_valid_query(q, g):
            pytest.skip("unlucky draw")
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            before = compute_cmc_map(q, g, max_rank=5)
            worst = -q.features.mean(axis=0)
            worst /= np.linalg.norm(worst)
            g2 = FeatureMatrix(np.vstack([g.features, worst]),
                               np.append(g.identity_ids, 999),
                               np.append(g.camera_ids, 0))
            after = compute_cmc_map(q, g2, max_rank=5)
        assert after.map_score <= before.map_score + 1e-12

    def test_single_query_matches_scalar_reference(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            q, g = _random_instance(rng, n_query=1, n_gallery=12)
            if not _has_valid_query(q, g):
                continue
            report = compute_cmc_map(q, g, max_rank=5)
            scores = (q.features @ g.features.T)[0]
            ap, first_hit = retrieval_reference(
                scores, int(q.identity_ids[0]), int(q.camera_ids[0]),
                g.identity_ids, g.camera_ids)
            assert abs(report.per_query_ap[0] - ap) < 1e-12
            assert report.cmc[0] == (1.0 if first_hit == 0 else 0.0)

    def test_empty_inputs_rejected(self):
        q = FeatureMatrix(np.array([[1.0, 0.0]]), np.array([1]), np.array([0]))
        with pytest.raises(ValueError):
            compute_cmc_map(q, q, max_rank=0)


class TestFeatureMatrixFile:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(17)
        fm = FeatureMatrix(_unit_rows(rng, 6, 5),
                           rng.integers(0, 9, 6), rng.integers(1, 7, 6))
        path = tmp_path / "features.txt"
        save_feature_matrix(path, fm)
        back = load_feature_matrix(path)
        np.testing.assert_array_equal(back.features, fm.features)
        np.testing.assert_array_equal(back.identity_ids, fm.identity_ids)
        np.testing.assert_array_equal(back.camera_ids, fm.camera_ids)
        header = path.read_text().splitlines()[0]
        assert header == "6 5"

    def test_rejects_malformed_rows(self, tmp_path):
        path = tmp_path / "features.txt"
        path.write_text("2 3\n1 1 1.0 0.0 0.0\n2 1 0.0 1.0\n")
        with pytest.raises(ValueError):
            load_feature_matrix(path)


def test_format_report_mentions_key_numbers():
    report = compute_cmc_map(
        FeatureMatrix(np.array([[1.0, 0.0]]), np.array([1]), np.array([0])),
        FeatureMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]),
                      np.array([1, 2]), np.array([1, 1])),
        max_rank=2,
    )
    text = format_report(report)
    assert "mAP=" in text and "rank1=" in text
    assert "queries_evaluated=1" in text

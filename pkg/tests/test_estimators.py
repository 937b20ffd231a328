"""Tests for the estimator wrappers and the procedural shape families."""

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from patchpose import patchnet
from patchpose.errors import EmptyCloud
from patchpose.estimators import (
    IcosahedralPoseEstimator,
    PatchAnnotator,
    PatchNetClassifier,
    check_cloud,
    check_clouds,
)
from patchpose.geometry import (
    apply_rotation,
    farthest_point_sample,
    normalize_cloud,
    sample_surface_points,
)
from patchpose.patches import PatchParams, annotate_patch
from patchpose.shapes import (
    asymmetric_family,
    box_mesh,
    handle_bar_mesh,
    mug_family,
    mug_mesh,
    stability_corpus,
)
from patchpose.symmetry import SymmetrySpec


def _reference_cloud(mesh, n=256, seed=3):
    pool = sample_surface_points(mesh, 8 * n, seed=seed)
    start = int(np.argmax(np.linalg.norm(pool - pool.mean(axis=0), axis=1)))
    sub, _ = farthest_point_sample(pool, n, start_index=start)
    return normalize_cloud(sub)[0]


# ---------------------------------------------------------------------------
# input checking


def test_check_cloud_accepts_list_of_points():
    # [TRIVIAL] shape coercion
    cloud = check_cloud([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
    assert cloud.shape == (2, 3)
    assert cloud.dtype == np.float64


def test_check_cloud_rejects_wrong_width():
    with pytest.raises(EmptyCloud):
        check_cloud(np.zeros((4, 2)))


def test_check_clouds_maps_over_list():
    out = check_clouds([np.zeros((3, 3)), np.ones((5, 3))])
    assert len(out) == 2 and out[1].shape == (5, 3)


# ---------------------------------------------------------------------------
# PatchNetClassifier


def _separable_corpus(n_clouds=6, n=64, seed=0):
    """Points with z > 0 are patch points; coordinates make it separable."""
    rng = np.random.default_rng(seed)
    clouds, labels = [], []
    for _ in range(n_clouds):
        pts = rng.uniform(-1.0, 1.0, size=(n, 3))
        clouds.append(pts)
        labels.append((pts[:, 2] > 0.0).astype(int))
    return clouds, labels


def test_patchnet_classifier_learns_separable_rule():
    clouds, labels = _separable_corpus()
    clf = PatchNetClassifier(hidden_dim=16, epochs=200, learning_rate=0.5, seed=1)
    clf.fit(clouds, labels)
    test_cloud, test_labels = _separable_corpus(n_clouds=1, seed=99)
    pred = clf.predict(test_cloud[0])
    accuracy = float(np.mean(pred == test_labels[0]))
    assert accuracy >= 0.9
    assert clf.loss_trace_[-1] < clf.loss_trace_[0]


def test_patchnet_classifier_proba_in_unit_interval():
    clouds, labels = _separable_corpus(n_clouds=2)
    clf = PatchNetClassifier(epochs=10).fit(clouds, labels)
    proba = clf.predict_proba(clouds[0])
    assert proba.shape == (len(clouds[0]),)
    assert np.all((proba >= 0.0) & (proba <= 1.0))


def test_patchnet_classifier_predict_patch_indices_sorted():
    clouds, labels = _separable_corpus(n_clouds=2)
    clf = PatchNetClassifier(epochs=10).fit(clouds, labels)
    idx = clf.predict_patch_indices(clouds[0], count=7)
    assert idx.shape == (7,)
    assert np.all(np.diff(idx) > 0)


def test_patchnet_classifier_unfitted_raises():
    with pytest.raises(NotFittedError):
        PatchNetClassifier().predict_proba(np.zeros((4, 3)))


def test_patchnet_classifier_length_mismatch():
    with pytest.raises(ValueError):
        PatchNetClassifier().fit([np.zeros((4, 3))], [])


def test_patchnet_classifier_matches_functional_training():
    clouds, labels = _separable_corpus(n_clouds=3)
    clf = PatchNetClassifier(hidden_dim=8, epochs=25, learning_rate=0.3, seed=4)
    clf.fit(clouds, labels)
    params = patchnet.init_params(8, 4)
    cfg = patchnet.TrainConfig(epochs=25, learning_rate=0.3, seed=4)
    dataset = [(c, np.asarray(y, dtype=float)) for c, y in zip(clouds, labels)]
    expected, _ = patchnet.train(params, dataset, cfg)
    np.testing.assert_array_equal(clf.params_.as_vector(), expected.as_vector())


# ---------------------------------------------------------------------------
# PatchAnnotator


def test_patch_annotator_matches_functional_annotation():
    mesh = box_mesh(1.0, 0.2, 0.15)
    cloud = _reference_cloud(mesh, n=200)
    ann_est = PatchAnnotator(n_points=200, max_vectors=6, ball_radius=0.2).fit()
    got = ann_est.transform(cloud)
    params = PatchParams(n_points=200, max_vectors=6, cos_threshold_deg=10.0,
                         ball_radius=0.2, min_cluster_size=1)
    expected = annotate_patch(cloud, params)
    np.testing.assert_array_equal(got.patch_indices, expected.patch_indices)
    np.testing.assert_allclose(got.patch_centers, expected.patch_centers)


def test_patch_annotator_list_input_returns_list():
    mesh = box_mesh(1.0, 0.2, 0.15)
    clouds = [_reference_cloud(mesh, n=128, seed=s) for s in (1, 2)]
    out = PatchAnnotator(n_points=128, max_vectors=5, ball_radius=0.25).transform(clouds)
    assert isinstance(out, list) and len(out) == 2
    assert all(len(a.patch_indices) > 0 for a in out)


# ---------------------------------------------------------------------------
# IcosahedralPoseEstimator


def test_pose_estimator_recovers_rotation_noiseless():
    mesh = box_mesh(1.0, 0.35, 0.2)
    template = _reference_cloud(mesh, n=256)
    rng = np.random.default_rng(12)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    observed = apply_rotation(template, q)
    est = IcosahedralPoseEstimator().fit(template)
    result = est.predict(observed)
    # The plain box is bilaterally ambiguous, so check the chamfer score
    # rather than the quaternion itself.
    assert result.score < 1e-6
    assert np.linalg.norm(result.pose.rotation) == pytest.approx(1.0)
    assert result.pose.rotation[0] >= 0.0


def test_pose_estimator_predict_list():
    mesh = box_mesh(1.0, 0.35, 0.2)
    template = _reference_cloud(mesh, n=128)
    est = IcosahedralPoseEstimator(iterations=10).fit(template)
    out = est.predict([template, template])
    assert len(out) == 2
    assert out[0].score < 1e-6


def test_pose_estimator_unfitted_raises():
    with pytest.raises(NotFittedError):
        IcosahedralPoseEstimator().predict(np.zeros((8, 3)))


def test_pose_estimator_get_params_round_trip():
    est = IcosahedralPoseEstimator(beta=2.0, iterations=7)
    params = est.get_params()
    assert params["beta"] == 2.0 and params["iterations"] == 7
    clone = IcosahedralPoseEstimator(**params)
    assert clone.get_params() == params


# ---------------------------------------------------------------------------
# shape families


def test_handle_bar_mesh_extent():
    mesh = handle_bar_mesh(rod_radius=0.05, knob_size=0.16, length=1.0)
    z = mesh.vertices[:, 2]
    assert z.max() == pytest.approx(0.58)  # length/2 + knob_size/2
    assert z.min() == pytest.approx(-0.58)


def test_mug_mesh_handle_sticks_out():
    mesh = mug_mesh(radius=0.3, height=0.7, handle_size=0.4)
    assert mesh.vertices[:, 0].max() == pytest.approx(0.7)  # radius + handle
    assert mesh.vertices[:, 0].min() == pytest.approx(-0.3)


def test_stability_corpus_shape_and_determinism():
    corpus = stability_corpus(8)
    assert len(corpus) == 8
    ids = [mid for mid, _, _ in corpus]
    assert ids[0].startswith("box_") and ids[1].startswith("cylinder_")
    assert len(set(ids)) == 8
    again = stability_corpus(8)
    for (_, m1, _), (_, m2, _) in zip(corpus, again):
        np.testing.assert_array_equal(m1.vertices, m2.vertices)


def test_stability_corpus_symmetry_specs():
    for model_id, _, sym in stability_corpus(8):
        assert isinstance(sym, SymmetrySpec)
        if model_id.startswith(("cylinder", "cone")):
            assert sym.kind == "continuous"
        else:
            assert sym.kind == "cyclic"


def test_asymmetric_family_has_no_symmetry():
    family = asymmetric_family(3)
    assert len(family) == 3
    assert all(sym.kind == "none" for _, _, sym in family)
    meshes = [m for _, m, _ in family]
    assert not np.array_equal(meshes[0].vertices, meshes[1].vertices)


def test_mug_family_count_and_symmetry():
    family = mug_family(4)
    assert len(family) == 4
    assert all(sym.kind == "none" for _, _, sym in family)

import numpy as np
import pytest

dptrack = pytest.importorskip("dptrack")


def tiny_config():
    cfg = dptrack.TrackerConfig()
    cfg.search_size = 64
    cfg.template_size = 32
    cfg.patch_size = 16
    cfg.embed_dim = 16
    cfg.depth = 1
    cfg.heads = 2
    cfg.n_pyramid_levels = 2
    cfg.illum_level_width = 4
    cfg.view_coarse_width = 4
    cfg.view_deform_width = 4
    cfg.view_width = 8
    cfg.head_hidden = 8
    cfg.steps = 4
    cfg.batch = 2
    cfg.seed = 7
    return cfg


def tiny_scene(seed):
    sc = dptrack.SceneConfig()
    sc.frame_size = 64
    sc.n_frames = 4
    sc.seed = seed
    return sc


def test_gen_sequence_shapes_and_determinism():
    frames, boxes = dptrack.gen_sequence(tiny_scene(3))
    assert frames.shape == (4, 3, 64, 64)
    assert frames.dtype == np.float32
    assert boxes.shape == (4, 4)
    assert frames.min() >= 0.0 and frames.max() <= 1.0
    again, boxes2 = dptrack.gen_sequence(tiny_scene(3))
    assert np.array_equal(frames, again)
    assert np.array_equal(boxes, boxes2)


def test_forward_map_shapes():
    trk = dptrack.Tracker(tiny_config())
    rng = np.random.default_rng(0)
    tmpl = rng.random((3, 32, 32), dtype=np.float32)
    srch = rng.random((3, 64, 64), dtype=np.float32)
    center, size, offset = trk.forward(tmpl, srch)
    assert center.shape == (1, 4, 4)
    assert size.shape == (2, 4, 4)
    assert offset.shape == (2, 4, 4)
    assert 0.0 <= center.min() and center.max() <= 1.0


def test_train_track_and_metrics():
    dataset = [dptrack.gen_sequence(tiny_scene(s)) for s in (1, 2)]
    trk = dptrack.Tracker(tiny_config())
    log = dptrack.train_tracker(trk, dataset)
    assert log.shape == (4, 3)
    assert np.all(np.isfinite(log))
    frames, boxes = dataset[0]
    pred = trk.track(frames, boxes[0])
    assert pred.shape == boxes.shape
    assert np.array_equal(pred[0], boxes[0])  # frame 0 echoes the init box
    report = dptrack.evaluate_trajectory(pred, boxes)
    assert 0.0 <= report["success_auc"] <= 1.0
    perfect = dptrack.evaluate_trajectory(boxes, boxes)
    assert perfect["precision_at_20"] == 1.0


def test_checkpoint_roundtrip(tmp_path):
    cfg = tiny_config()
    trk = dptrack.Tracker(cfg)
    path = str(tmp_path / "model.ckpt")
    trk.save(path)
    cfg.seed = 99
    other = dptrack.Tracker(cfg)
    other.load(path)
    rng = np.random.default_rng(1)
    tmpl = rng.random((3, 32, 32), dtype=np.float32)
    srch = rng.random((3, 64, 64), dtype=np.float32)
    for a, b in zip(trk.forward(tmpl, srch), other.forward(tmpl, srch)):
        assert np.array_equal(a, b)


def test_pyramid_and_ablation():
    trk = dptrack.Tracker(tiny_config())
    frames, _ = dptrack.gen_sequence(tiny_scene(5))
    gaussians, laplacians = dptrack.build_pyramid(trk, frames[0])
    assert len(gaussians) == 3 and len(laplacians) == 2
    # each residual level reconstructs its gaussian within float rounding
    assert gaussians[0].shape == (3, 64, 64)
    trk.zero_interaction_coefficients()  # must not break the forward pass
    center, _, _ = trk.forward(
        np.zeros((3, 32, 32), np.float32), np.zeros((3, 64, 64), np.float32)
    )
    assert np.all(np.isfinite(center))


def test_iou_cle_hand_values():
    a = np.array([0.0, 0.0, 1.0, 1.0])
    b = np.array([0.5, 0.5, 1.0, 1.0])
    assert dptrack.iou(a, b) == pytest.approx(1.0 / 7.0)
    c = np.array([3.0, 4.0, 0.0, 0.0])
    d = np.array([0.0, 0.0, 0.0, 0.0])
    assert dptrack.cle(c, d) == pytest.approx(5.0)

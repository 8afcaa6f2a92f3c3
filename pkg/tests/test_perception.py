import math

import numpy as np
import pytest

from v2icoop.config import ModelConfig
from v2icoop.nn import ShapeError, Tensor, check_params, ops
from v2icoop.perception import (build_targets, decode_detections, detect, detection_loss, detections_from_text,
                                detections_to_text, detector_heads, extract_features, init_backbone,
                                init_detector)
from v2icoop.scene import SceneConfig, generate_scene, rasterize_view

CFG = ModelConfig()


def test_zero_observation_gives_zero_features(rng):
    p = init_backbone(rng, CFG, "veh")
    out = extract_features(np.zeros((1, 8, 8, 3)), p, "veh")
    assert out.shape == (1, 8, 8, CFG.feature_channels)
    assert not out.data.any()


def test_backbone_rejects_wrong_channels(rng):
    p = init_backbone(rng, CFG, "veh")
    with pytest.raises(ShapeError):
        extract_features(np.zeros((1, 8, 8, 2)), p, "veh")


def test_backbone_is_translation_equivariant_away_from_borders(rng):
    p = init_backbone(rng, CFG, "veh")
    x = np.zeros((1, 24, 24, 3))
    x[0, 8:12, 9:11] = rng.uniform(size=(4, 2, 3))
    shifted = np.roll(x, (2, 3), axis=(1, 2))
    a = extract_features(x, p, "veh").data
    b = extract_features(shifted, p, "veh").data
    # three 3x3 layers: receptive radius 3, content stays >3 cells from every border
    np.testing.assert_allclose(b[0, 5:20, 6:21], a[0, 3:18, 3:18], atol=1e-12)


def test_zero_head_gives_half_confidence(rng):
    p = {k: Tensor(np.zeros_like(v.data)) for k, v in init_detector(rng, CFG).items()}
    logits, reg = detector_heads(Tensor(np.zeros((1, 4, 4, CFG.head_dim))), p)
    np.testing.assert_array_equal(ops._sigmoid(logits.data), 0.5)
    assert reg.shape == (1, 4, 4, 6)


def test_one_dominant_cell_decodes_to_one_box(geometry):
    conf = np.full(geometry.shape, 0.01)
    conf[20, 30] = 0.95
    reg = np.zeros(geometry.shape + (6,))
    reg[20, 30] = (0.5, 0.5, math.log(4.0), math.log(2.0), 0.0, 1.0)
    det = decode_detections(conf, reg, geometry)
    assert det.boxes.shape == (1, 5)
    xs, ys = geometry.cell_centers()
    np.testing.assert_allclose(det.boxes[0], [xs[20, 30], ys[20, 30], 4.0, 2.0, 0.0], atol=1e-12)


def test_nms_inside_decoding(geometry):
    conf = np.zeros(geometry.shape)
    conf[20, 30], conf[20, 31] = 0.9, 0.8
    reg = np.zeros(geometry.shape + (6,))
    reg[..., 2], reg[..., 3], reg[..., 5] = math.log(4.0), math.log(2.0), 1.0
    det = decode_detections(conf, reg, geometry)
    np.testing.assert_array_equal(det.scores, [0.9])


def _targets(boxes, geometry):
    cls, reg, _ = build_targets(boxes, geometry)
    return cls[None], reg[None]


def test_perfect_prediction_has_near_zero_loss(geometry):
    scene = generate_scene(SceneConfig(), geometry, 1)
    cls, reg = _targets(scene.boxes(), geometry)
    logits = Tensor(np.where(cls[..., None] > 0, 40.0, -40.0))
    d = detection_loss(logits, Tensor(reg), cls, reg, CFG).item()
    assert 0.0 <= d < 1e-12


def test_empty_scene_with_zero_confidence_has_zero_loss(geometry):
    cls = np.zeros((1,) + geometry.shape)
    reg = np.zeros(cls.shape + (6,))
    logits = Tensor(np.full(cls.shape + (1,), -800.0))
    assert detection_loss(logits, Tensor(reg), cls, reg, CFG).item() == 0.0


def test_single_positive_at_half_confidence():
    cls = np.zeros((1, 4, 4))
    cls[0, 1, 2] = 1.0
    reg = np.zeros((1, 4, 4, 6))
    logits = np.full((1, 4, 4, 1), -800.0)
    logits[0, 1, 2, 0] = 0.0
    d = detection_loss(Tensor(logits), Tensor(reg), cls, reg, CFG).item()
    assert d == pytest.approx(0.25 * 0.25 * math.log(2.0), rel=1e-12)


def test_targets_centre_cell_offsets(geometry):
    cls, reg, pos = build_targets(np.array([[0.1, -0.3, 4.0, 2.0, 0.5]]), geometry)
    assert pos.sum() == 1
    r, c = np.argwhere(pos)[0]
    assert (r, c) == (31, 32)
    np.testing.assert_allclose(reg[r, c], [0.25, 0.25, math.log(4.0), math.log(2.0), math.sin(0.5), math.cos(0.5)])


def test_backbone_detector_and_loss_gradients(rng, small_geometry):
    cfg = CFG
    p = init_backbone(rng, cfg, "veh")
    p.update(init_detector(rng, cfg))
    scene = generate_scene(SceneConfig(min_objects=2, max_objects=2, min_separation=1.0), small_geometry, 2)
    obs = rasterize_view(scene, "vehicle", small_geometry).grid[None]
    cls, reg = _targets(scene.boxes(), small_geometry)

    def loss():
        f = extract_features(obs, p, "veh")
        lg, rg = detector_heads(f, p)
        return detection_loss(lg, rg, cls, reg, cfg)

    assert check_params(loss, p, max_coords=6, rng=rng) < 1e-4


def test_loss_decreases_from_random_to_perfect_predictions(rng, geometry):
    scene = generate_scene(SceneConfig(), geometry, 4)
    cls, reg = _targets(scene.boxes(), geometry)
    good_logits = np.where(cls[..., None] > 0, 12.0, -12.0)
    bad_logits = rng.normal(scale=2.0, size=good_logits.shape)
    bad_reg = rng.normal(size=reg.shape)
    losses = []
    for t in np.linspace(0.0, 1.0, 11):
        lg = Tensor((1 - t) * bad_logits + t * good_logits)
        rg = Tensor((1 - t) * bad_reg + t * reg)
        losses.append(detection_loss(lg, rg, cls, reg, CFG).item())
    assert losses[-1] < losses[0]
    assert sum(b < a for a, b in zip(losses, losses[1:])) >= 8


def test_detect_and_text_round_trip(rng, small_geometry):
    p = init_detector(rng, CFG)
    p["det.cls1.b"].data[:] = 2.0
    det = detect(Tensor(rng.normal(size=(1,) + small_geometry.shape + (CFG.head_dim,))), p, small_geometry, CFG)[0]
    assert len(det.scores) > 0
    boxes, scores = detections_from_text(detections_to_text(det))
    np.testing.assert_array_equal(boxes, det.boxes)
    np.testing.assert_array_equal(scores, det.scores)
    with pytest.raises(ValueError, match="line 1"):
        detections_from_text("0.5 1 2\n")

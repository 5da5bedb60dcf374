import numpy as np

from domainness.images import load_image
from domainness.render import heatmap_png, overlay_png


def test_heatmap_grayscale_levels(tmp_path):
    scores = np.array([[0.0, 0.5], [1.0, 0.25]], dtype=np.float32)
    p = tmp_path / "h.png"
    heatmap_png(scores, p)
    img = load_image(p)
    assert img[0, 0, 0] == 0.0
    assert img[1, 0, 0] == 1.0
    assert abs(img[0, 1, 0] - 0.5) < 2 / 255


def test_overlay_grays_low_regions_only(tmp_path):
    img = np.zeros((4, 4, 3))
    img[:, :, 0] = 1.0  # pure red
    scores = np.zeros((4, 4), dtype=np.float32)
    scores[2:, :] = 0.9  # high domainness rows stay untouched
    p = tmp_path / "o.png"
    overlay_png(img, scores, p, threshold=0.5)
    out = load_image(p)
    assert np.allclose(out[2:, :, 0], 1.0, atol=1 / 255)
    assert np.allclose(out[:2, :, 0], 0.75, atol=2 / 255)  # blended toward gray
    assert np.allclose(out[:2, :, 1], 0.25, atol=2 / 255)

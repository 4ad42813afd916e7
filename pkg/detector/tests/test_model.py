import pytest
import torch

from toydetector.model import NUM_QUERIES, LaneSetDetector
from toydetector.scenes import IMAGE_SIZE, generate_scene


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return LaneSetDetector()


def test_output_has_fixed_slot_count(model):
    for count in (0, 1, 4, 6):
        scene = generate_scene(50 + count, force_count=count)
        out = model(torch.from_numpy(scene.image).unsqueeze(0))
        assert out.exist_logits.shape == (1, NUM_QUERIES)
        assert out.params.shape == (1, NUM_QUERIES, 3)
        assert out.shared.shape == (1, 2)
        assert out.num_slots == NUM_QUERIES


def test_different_images_give_different_outputs(model):
    a = generate_scene(1, force_count=2)
    b = generate_scene(2, force_count=5)
    imgs = torch.stack([torch.from_numpy(a.image), torch.from_numpy(b.image)])
    out = model(imgs)
    assert not torch.allclose(out.exist_logits[0], out.exist_logits[1])


def test_all_zero_image_finite(model):
    out = model(torch.zeros(1, IMAGE_SIZE, IMAGE_SIZE))
    assert torch.isfinite(out.exist_logits).all()
    assert torch.isfinite(out.params).all()
    assert torch.isfinite(out.shared).all()


def test_wrong_size_rejected(model):
    with pytest.raises(ValueError):
        model(torch.zeros(1, 64, 64))

import numpy as np
import pytest

from patho_ssl.slides import Slide, SyntheticSlideSpec, generate_synthetic_slide


def make_slide(width=64, height=64, color=(200, 150, 180), labels_value=1, slide_id=0):
    """Uniform-color slide with a constant label mask."""
    pixels = np.full((height, width, 3), color, dtype=np.uint8)
    labels = np.full((height, width), labels_value, dtype=np.uint8)
    return Slide(slide_id=slide_id, width=width, height=height, pixels=pixels, labels=labels)


@pytest.fixture(scope="session")
def synthetic_slide():
    """One mid-size generated slide shared across read-only tests."""
    spec = SyntheticSlideSpec(
        width=512,
        height=512,
        tumor_fraction=0.1,
        background_fraction=0.15,
        min_region_diameter=128,
        rng_seed=2024,
    )
    return generate_synthetic_slide(spec, slide_id=0)

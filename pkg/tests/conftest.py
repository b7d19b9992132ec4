import math

import numpy as np
import pytest
from hypothesis import settings

from textkp.annotations import TextAnnotation

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

CAMEL_RECT = ((0.0, 0.0), (100.0, 0.0), (100.0, 20.0), (0.0, 20.0))


def sine_polygon(x0=20.0, y0=60.0, amp=12.0, wavelength=180.0, length=160.0, height=24.0, k=7):
    """14-vertex band whose upper/lower curves are the mid-curve shifted vertically."""
    xs = np.linspace(x0, x0 + length, k)
    mid = y0 + amp * np.sin(2 * math.pi * (xs - x0) / wavelength)
    upper = [(float(x), float(y - height / 2)) for x, y in zip(xs, mid)]
    lower = [(float(x), float(y + height / 2)) for x, y in zip(xs, mid)]
    return tuple(upper + lower[::-1])


@pytest.fixture
def camel():
    return TextAnnotation(CAMEL_RECT, "CAMEL")


@pytest.fixture
def camel_placed():
    """CAMEL rectangle placed inside a 160x80 image."""
    return TextAnnotation(((30.0, 20.0), (130.0, 20.0), (130.0, 40.0), (30.0, 40.0)), "CAMEL")

import numpy as np
import pytest
from hypothesis import settings

from dctstab.affine import SimilarityParams, map_points
from dctstab.synth import make_texture

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def render_similarity(texture: np.ndarray, params: SimilarityParams, h: int, w: int, pad: int) -> np.ndarray:
    """Sample a padded texture through a centre-anchored similarity.

    Pixel ``p`` of the output reads ``texture(Q(p) + pad)``, where ``Q`` is
    the similarity of an ``h x w`` frame.
    """
    from scipy import ndimage

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = map_points(params, np.stack([xx.ravel(), yy.ravel()], axis=1), h, w)
    coords = np.stack([pts[:, 1] + pad, pts[:, 0] + pad])
    return ndimage.map_coordinates(texture, coords, order=1).reshape(h, w)


@pytest.fixture(scope="session")
def texture():
    """Band-limited texture with a 40 px margin around a 240x320 frame."""
    return make_texture(320, 400, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_line():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

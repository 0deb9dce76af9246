import sys
from pathlib import Path

import pytest

SRC = Path(__file__).resolve().parent.parent / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from anchorforge.geometry import DEFAULT_ANCHOR_CONFIG, generate_anchors  # noqa: E402


@pytest.fixture(scope="session")
def default_grid():
    """The 9216-anchor grid; generated once per session."""
    return generate_anchors(DEFAULT_ANCHOR_CONFIG)

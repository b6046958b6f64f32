from __future__ import annotations

import io
import sys
from pathlib import Path

import pytest

# Make the package importable without installation, and the tests
# importable as plain modules (tracegen, fixtures).
_ROOT = Path(__file__).resolve().parent.parent
for entry in (str(_ROOT / "src"), str(_ROOT / "tests")):
    if entry not in sys.path:
        sys.path.insert(0, entry)


@pytest.fixture
def tiny_png() -> bytes:
    """A deterministic 2x2 RGB PNG."""
    from PIL import Image

    img = Image.new("RGB", (2, 2), (200, 30, 30))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()

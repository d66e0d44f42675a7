"""Allow running the demos straight from a source checkout."""

import sys
from pathlib import Path

try:
    import shadowfuse  # noqa: F401
except ImportError:
    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

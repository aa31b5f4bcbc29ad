import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from accelmine.config import SystemConfig  # noqa: E402


@pytest.fixture
def cfg():
    return SystemConfig()

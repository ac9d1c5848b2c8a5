import sys
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

# fixed example generation so every run of the suite sees the same cases
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

import sys
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("drk", deadline=None, max_examples=50)
settings.load_profile("drk")

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])

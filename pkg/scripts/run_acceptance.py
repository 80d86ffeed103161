"""Run the acceptance suite and print one verdict line per criterion."""
import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    tests = Path(__file__).resolve().parents[1] / "tests" / "test_acceptance.py"
    sys.exit(pytest.main([str(tests), "-q", *sys.argv[1:]]))

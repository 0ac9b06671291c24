import sys
from pathlib import Path

# Make the sibling helpers module importable regardless of how pytest is run.
sys.path.insert(0, str(Path(__file__).parent))

import sys
from pathlib import Path

# make the shared helpers importable regardless of the pytest rootdir
sys.path.insert(0, str(Path(__file__).parent))

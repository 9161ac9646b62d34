"""
dpmis startup script.
Run this from the project root directory without installing the package:

    python run.py gen-data --n 100 --seed 7
"""

import sys
import os

# Add src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

if __name__ == "__main__":
    from dpmis.main import main

    sys.exit(main())

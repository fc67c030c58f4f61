import os
import sys

# The tests import their helpers as a top-level `shared` module, the way
# test.py runs them (unittest with tests/ as the working directory).
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

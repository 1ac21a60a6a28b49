#!/usr/bin/env python3
"""
Command line entry point for canids
"""
import os
import sys

# Add the backend directory to Python path
backend_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'backend')
sys.path.insert(0, backend_dir)

try:
    from canids.cli import run
except ImportError as e:
    print(f"Import error: {e}", file=sys.stderr)
    print("Python path:", sys.path, file=sys.stderr)
    sys.exit(1)

if __name__ == "__main__":
    sys.exit(run())

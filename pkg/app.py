#!/usr/bin/env python3
"""
Screen BEM entry point
    python app.py solve --config configs/koch_desk.json
"""

import sys

from cli import main

if __name__ == '__main__':
    sys.exit(main())

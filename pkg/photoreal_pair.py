#!/usr/bin/env python3
"""Entry point script for the image-pair translation application."""

import sys

from src.main import main

if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Startup script for the epmbench command line."""

import sys

from epmb_pipeline.main import main


if __name__ == "__main__":
    sys.exit(main())

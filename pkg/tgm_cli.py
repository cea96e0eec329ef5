#!/usr/bin/env python3
"""
TGM 命令行工具

用法:
    python tgm_cli.py train --maze fixtures/mazes/room_3x3.maze --episodes 300 --seeds 0..4
    python tgm_cli.py inspect --checkpoint runs/latest/seed_0/checkpoint.json --format json
    python tgm_cli.py eval --checkpoint runs/latest/seed_0/checkpoint.json \
        --maze fixtures/mazes/room_3x3.maze --ground-truth
"""

import sys

from src.application.cli import main


if __name__ == "__main__":
    sys.exit(main())

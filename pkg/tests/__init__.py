"""
TGM Agent Test Suite

- test_distributions.py / test_maze.py: numeric kernels and the maze world
- test_vgm.py / test_transition.py / test_structure.py: online state learning
- test_agent.py / test_cli.py: training loop, checkpoints and reports

Coverage target: > 80% for all core modules
"""

"""
Computational core: geometry, features, alignment, movement and re-homing
detection, view selection, metrics and the synthetic rig simulator
"""

"""citysim: a headless, deterministic urban world simulator.

Procedural city generation over a quadtree scene graph, two-resolution
waypoint navigation with A* routing, PID-driven background traffic, a
Gym-like multi-agent interface with sync/async stepping, a two-tier action
planner, a multi-agent delivery economy, procedural task suites with their
metric formulas, and a newline-delimited JSON TCP protocol.
"""

__version__ = "0.1.0"

"""Numerical laboratory for representation-transfer diversity: two-phase
training on synthetic tasks, complexity estimation, exact diversity and
eluder-dimension computation on finite instances, hard-instance
constructions, and a seeded experiment harness."""

__version__ = "0.1.0"

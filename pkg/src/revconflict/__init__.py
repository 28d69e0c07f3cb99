"""Contradiction evidence detection and graded disagreement intensity for
paired peer reviews: a deliberating multi-agent pipeline, its evaluation
protocol, and teacher-dataset export for distillation."""

__version__ = "0.1.0"

"""Explainable-driving sandbox.

A 2D track world with a DDPG lane-following agent, a frame-annotation
pipeline that pairs driving scenes with causal question-answer labels, and
a visual-question-answering model that justifies the agent's actions.
"""

__version__ = "0.1.0"

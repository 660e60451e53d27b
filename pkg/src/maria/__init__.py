"""Multi-scenario ranking with adaptive feature learning.

Self-contained research implementation: a reverse-mode autodiff core, the
full adaptive-feature ranking model with scenario-aware scaling, refinement
and correlation modules, comparable baselines, a synthetic multi-scenario
data generator, a trainer with ablation support, and a command-line driver.
"""

from .autodiff import Graph, ShapeError, Value, backward

__all__ = ["Graph", "Value", "ShapeError", "backward"]
__version__ = "0.1.0"

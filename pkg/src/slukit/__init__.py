"""Knowledge-augmented joint dialogue-act detection and slot filling."""

from .model import JointSLUModel, apply_ablation

__all__ = ["JointSLUModel", "apply_ablation"]
__version__ = "0.1.0"

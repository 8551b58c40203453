"""
ndgrad - dense arrays, a fixed differentiable op set, reverse-mode
gradients and a finite-difference checker
"""
from src.ndgrad.tensor import Precision, Tensor
from src.ndgrad.graph import Graph, Node, backward
from src.ndgrad.ops import OPS
from src.ndgrad.gradcheck import GradCheckReport, check_all_ops, grad_check
from src.ndgrad.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Precision",
    "Tensor",
    "Graph",
    "Node",
    "backward",
    "OPS",
    "GradCheckReport",
    "grad_check",
    "check_all_ops",
    "load_checkpoint",
    "save_checkpoint",
]

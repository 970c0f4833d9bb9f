"""
Dense arrays with reverse-mode differentiation, layers, Adam and checkpoints.
"""

from app.tensor.array import DenseArray, Graph, backward, get_dtype, precision

__all__ = ["DenseArray", "Graph", "backward", "get_dtype", "precision"]

"""Neural-network training by monotone operator iteration.

Subpackages cover dense numerics, graph filtering, the layered network with
its hand-written backward pass, the operator construction and step rules,
training loops, data generation, evaluation metrics, and an experiment CLI.
"""

__version__ = "0.1.0"

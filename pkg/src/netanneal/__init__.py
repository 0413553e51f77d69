"""Distributed global optimization of nonconvex sum objectives.

Simulates the annealed consensus + gradient recursion on random
undirected graphs, its centralized baseline, and the Gibbs-measure
oracles used to verify that the dynamics concentrate on the global
minima.
"""

__version__ = "0.1.0"

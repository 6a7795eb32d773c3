# TSP heuristics on Ahlfors-regular spaces
"""
Experiments on nearest-neighbor and greedy TSP tours over random samples of
Ahlfors-regular metric spaces.

Modules:
- spaces: cube, torus and IFS-attractor spaces, sampling, regularity witnesses
- solvers: nearest-neighbor, greedy, Held-Karp, brute force and 2-opt
- analysis: ball families, packing checks, bound chain, isolated points
- adversarial: searches for instances with large heuristic/optimal ratio
- tsp_experiments: command-line front end
"""

__version__ = "1.0.0"
__author__ = "rv0-0"

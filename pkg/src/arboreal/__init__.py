"""Arboreal gas toolkit.

Spanning-forest measures on finite graphs and tori, their fermionic
(H^{0|2}) representation, finite-range decompositions of lattice Green
functions, perturbative coupling flows, and a Metropolis sampler.
"""

__version__ = "0.1.0"

"""Moment functionals, expansions and characteristic roots of perturbed semi-Markov processes."""

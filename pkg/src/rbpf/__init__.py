"""Rao-Blackwellised particle filtering for dynamic Bayesian networks."""

"""Penalty and descending-flow solvers for obstacle variational inequalities."""

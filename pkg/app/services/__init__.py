"""Numerical services.

Services hold the algorithms: kernels, micro and macro solvers, upscaling,
reference computations and the experiment harness built on them.
"""

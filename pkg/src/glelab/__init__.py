"""Numerical laboratory for the generalized Langevin equation with power-law memory."""
from .kernels import SumExpKernel, make_powerlaw_kernel, kernel_eval, kernel_deriv, chaining_bound
from .history import InitialPast, memory_integral, growth_norm, novikov_integral
from .integrators import run_direct, run_embedded, hamiltonian, get_potential

__version__ = "0.1.0"

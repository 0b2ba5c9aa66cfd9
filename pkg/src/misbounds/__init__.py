"""Certified bounds on the best worst-case ratio of randomized monotone
scale-free allocation for n tasks on two machines."""

__version__ = "0.1.0"

"""Dual-uncertainty test-time adaptation toolkit.

Numeric core (tensor IO, autodiff, linear algebra, RNG), the semantic and
geometric uncertainty losses, multi-head depth fusion, the online adaptation
loop, a synthetic detection world, and the experiment harness behind the
``duo`` command line tool.
"""

__version__ = "0.1.0"

"""Collective motion through body-attitude alignment on the rotation group.

The package covers three levels of description and the numerics tying them
together:

* an agent-based simulator where each agent carries a position and a full
  orientation frame, aligning with the polar factor of the locally averaged
  frames under rotational noise (:mod:`bodyflock.ibm`);
* the equilibrium family of the corresponding kinetic operator -- a von
  Mises-type distribution on rotations -- with its normalizer, sampler, and
  flux constant (:mod:`bodyflock.equilibria`);
* the macroscopic equations for density and mean frame, whose transport
  coefficients come from a weighted one-dimensional profile solve
  (:mod:`bodyflock.gci`) and which are integrated on periodic grids by
  :mod:`bodyflock.pde`.

:mod:`bodyflock.so3` provides the shared rotation-group calculus, and
:mod:`bodyflock.cli` the command-line front end.
"""

from . import so3, so3grid, equilibria, gci, ibm, pde, config, validate, cli  # noqa: F401

__version__ = "0.1.0"

"""Independent reference values used by several test modules."""

import math

import numpy as np
from scipy import special


def bessel_green(r):
    """Neumann Green function of -Lap + 1 on the unit disk, source at the centre."""
    return (special.k0(r) + special.k1(1.0) / special.i1(1.0) * special.i0(r)) / (2 * math.pi)


BESSEL_ROBIN = (math.log(2) - np.euler_gamma + special.k1(1.0) / special.i1(1.0)) / (2 * math.pi)

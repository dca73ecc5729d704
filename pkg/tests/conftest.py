import math

import numpy as np
import pytest

from skbarrier.measures import RadialMeasure


def poisson_cost_oracle(r=1.0, R=2.0, alpha=1.0, n=4096):
    """E|x - B_tau|^alpha for exit from the disk of radius R started at |x| = r.

    Trapezoid rule (spectrally accurate for periodic integrands) over the
    Poisson exit density (R^2 - r^2) / (2 pi (R^2 - 2 R r cos t + r^2)).
    """
    t = 2 * math.pi * np.arange(n) / n
    dens = (R * R - r * r) / (2 * math.pi * (R * R - 2 * R * r * np.cos(t) + r * r))
    dist = np.sqrt(R * R - 2 * R * r * np.cos(t) + r * r)
    return float(np.sum(dens * dist ** alpha) * 2 * math.pi / n)


@pytest.fixture
def sphere1():
    return RadialMeasure.sphere(1.0)


@pytest.fixture
def sphere2():
    return RadialMeasure.sphere(2.0)


@pytest.fixture
def section1_nu():
    # half at the origin, half on the sphere of radius 2
    return RadialMeasure.from_atoms(2, [(0.0, 0.5), (2.0, 0.5)])


@pytest.fixture
def two_rings():
    return RadialMeasure.from_atoms(2, [(1.5, 0.5), (2.5, 0.5)])

from dataclasses import dataclass

import numpy as np

RULE = 0
EXIT = 1
CAP = 2
CAUSES = {RULE: "rule", EXIT: "exit-O", CAP: "max-time"}

NORMAL = 1
REVERSED = -1


@dataclass(frozen=True)
class KernelConfig:
    """Flat parameter bundle consumed by both path kernels.

    Rings are spheres ``|z| = radii[j]``; a crossing at ``z`` stops the path
    when ``cos(ref, z) > thresholds[j]`` (``orientation = NORMAL``) or
    ``< thresholds[j]`` (``REVERSED``). Thresholds at -1 (normal) or +1
    (reversed) mark full spheres.
    """

    dim: int
    radii: np.ndarray
    thresholds: np.ndarray
    orientation: int
    universe: float
    h: float
    seed: int
    horizon: float = np.inf
    wos_mult: float = 4.0
    max_steps: int = 10_000
    delay_prob: float = 0.0
    delay_radius: float = 0.0
    plane_normal: np.ndarray = None
    plane_offset: float = 0.0
    threads: int = 1
    anchor: np.ndarray = None

    @property
    def plane_active(self):
        return self.plane_normal is not None

    def anchor_array(self):
        """Pending unarmed window: every path starts disarmed until it leaves
        ``B(anchor, delay_radius)``; used for continuations of delayed rules."""
        if self.anchor is None:
            return np.zeros(self.dim), False
        return np.ascontiguousarray(self.anchor, dtype=np.float64), True

    def arrays(self):
        radii = np.ascontiguousarray(self.radii, dtype=np.float64)
        thr = np.ascontiguousarray(self.thresholds, dtype=np.float64)
        pn = np.zeros(self.dim) if self.plane_normal is None else np.asarray(self.plane_normal, dtype=np.float64)
        return radii, thr, np.ascontiguousarray(pn)

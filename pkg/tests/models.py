"""Shared model fixtures for the foliation tests."""

import math

from channel_lab.foliation import ExtendedMap
from channel_lab.scalar_fields import FieldSeries2D as F2
from channel_lab.toy_return_map import ZMapCoeffs

SHAPES = (
    F2(((0, 0, 0, 1.0), (0, 1, 0, 0.5))),
    F2(((0, 0, 0, 0.5), (1, 1, 1, 0.3))),
    F2(((0, 0, 0, 1.0), (1, 0, 0, 0.4))),
)


def remainder_model(eps=1e-3):
    """Extended map with r- and phi-dependent fields, Gamma = 2, z mod 1."""
    Om = F2(((0, 0, 0, 0.3), (1, 1, 0, 0.02), (0, 1, 1, 0.03)))
    b0 = F2(((0, 0, 0, 0.5), (0, 1, 0, 0.1), (1, 1, 0, 0.05)))
    c = F2(((0, 1, 1, 0.1), (1, 1, 1, 0.05)))
    mode = "extended" if eps else "truncated"
    co = ZMapCoeffs(Om, F2.constant(2.0), b0, c, mode=mode, z_mod_one=True, eps=(eps,) * 3, shapes=SHAPES)
    return ExtendedMap(co, a1=math.sqrt(0.1), h=0.1)

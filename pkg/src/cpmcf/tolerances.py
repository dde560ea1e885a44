"""Central numerical tolerances.

Everything that compares floating point values against a threshold reads it
from here, so a caller can tighten or loosen a whole run in one place.
"""
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    unit_norm: float = 1e-12          # |z| = 1 check for points
    gauge_modulus: float = 1e-9       # first component treated as nonzero above this
    horizontal: float = 1e-12         # |<w, z>| for tangent representatives
    degenerate_input: float = 1e-12   # smallest vector norm accepted by normalize
    frame_rank: float = 1e-8          # smallest singular value of a tangent spanning set
    immersion_rank: float = 1e-6      # smallest singular value of a discrete differential
    neighbour_distance: float = 0.5   # max distance between adjacent grid nodes
    skew: float = 1e-10               # ||A + A^T|| accepted as skew
    slack_leak: float = 1e-9          # accepted negative slack in falsification
    strict_rel: float = 1e-12         # strict inequality: slack > strict_rel*(1+|scale|)
    equality_abs: float = 1e-12       # equality-case inequality: slack >= -equality_abs
    confirm_abs: float = 1e-6         # counterexample must persist below -confirm_abs


DEFAULT = Tolerances()
_current = DEFAULT


def get() -> Tolerances:
    return _current


def set_tolerances(**kw) -> Tolerances:
    """Override selected tolerances globally; returns the previous set."""
    global _current
    prev = _current
    _current = replace(_current, **kw)
    return prev


def reset() -> None:
    global _current
    _current = DEFAULT

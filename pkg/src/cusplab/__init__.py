"""Cusp cohomology of geometrically finite hyperbolic groups.

Lie-theoretic core for so(n+1,1), the Chevalley-Eilenberg complex of the
horospherical algebra, Eisenstein series of closed forms attached to cusps,
and their constant terms along other cusps.
"""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .lie import CoefficientModule, LieError, ModuleKind
from .geometry import GeometryError, IndeterminateError, ParabolicFrame, iwasawa
from .cohomology import build_complex, top_cohomology
from .groups import (CuspDatum, GroupError, KleinianGroup, convergence_gate, detect_cusps,
                     enumerate_cosets, enumerate_words, preset, preset_names)
from .forms import FormValue, eisenstein, extend, phi
from .intertwining import independence_report, intertwine, restricted_class
from .kernels import BACKEND

__all__ = [
    "BACKEND", "CoefficientModule", "CuspDatum", "FormValue", "GeometryError", "GroupError",
    "IndeterminateError", "KleinianGroup", "LieError", "ModuleKind", "ParabolicFrame",
    "__version__", "build_complex", "convergence_gate", "detect_cusps",
    "eisenstein", "enumerate_cosets", "enumerate_words", "extend", "independence_report",
    "intertwine", "iwasawa", "phi", "preset", "preset_names", "restricted_class",
    "top_cohomology",
]

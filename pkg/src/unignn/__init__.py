"""Hypergraph message-passing networks on a small numpy autodiff engine.

Subpackages and modules:

``hypergraph``  incidence structure, self-loops, degrees, induced subhypergraphs
``autodiff``    reverse-mode tensors, segment kernels, Adam
``layers``      UniGCN, UniGAT, UniGIN, UniSAGE, UniGCNII, UniGCN* and the model stack
``gwl``         1-GWL color refinement and a brute-force isomorphism oracle
``data``        canonical dataset format, splits, fixtures
``train``       transductive, inductive, depth-sweep and self-loop protocols
``cli``         command-line entry point
"""

from .errors import InputError, NumericalError, UniGNNError
from .hypergraph import IncidenceStructure, add_self_loops, build, degrees, induce
from .layers import ModelSpec, UniGNN, Variant, prepare

__version__ = "0.1.0"

__all__ = [
    "IncidenceStructure", "InputError", "ModelSpec", "NumericalError", "UniGNN", "UniGNNError",
    "Variant", "add_self_loops", "build", "degrees", "induce", "prepare",
]

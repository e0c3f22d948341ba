"""Label-free multi-domain translation at desk scale.

Transformer backbone + cluster-distilled domain discriminator +
Gumbel-Max routed per-decoder-layer experts, trained stage-wise, with the
evaluation machinery (BLEU-4, category purity, NMI, routing statistics)
to verify each mechanism.
"""

from .backend import BACKEND
from .tensor import Tensor, checked_mode, no_grad, set_checked

__version__ = "0.1.0"

__all__ = ["BACKEND", "Tensor", "checked_mode", "no_grad", "set_checked",
           "__version__"]

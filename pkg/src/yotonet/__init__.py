"""Zero-shot cross-domain bearing fault diagnosis.

A physics-aware feature distiller feeds a domain-conditioned sparse
mixture-of-experts, trained on several source domains at once and
evaluated on domains never seen during training.  Everything runs on a
small tape-based autodiff engine over float64 numpy arrays, so runs are
bit-reproducible across machines.
"""

from . import (cli, config, data, model, objective, protocol, seeds, signal,
               tensor, training)

__version__ = "0.1.0"

__all__ = ["cli", "config", "data", "model", "objective", "protocol", "seeds",
           "signal", "tensor", "training", "__version__"]

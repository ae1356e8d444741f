"""Loss functions and their fixed composition.

Three terms: the main classification head, an auxiliary head on the
pre-expert tokens (weight alpha), and the gate load-balance penalty
(weight beta, with the penalty itself carrying lambda_bal).  The total
is always main + alpha*aux + beta*gate; a LossReport carries the pieces
so logs can be checked against that identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import ConfigError, ContractError
from .tensor import Tape, Tensor


@dataclass
class LossWeights:
    """Mixing weights for the composite objective; all must be >= 0."""

    alpha: float = 0.3
    beta: float = 1.0
    lambda_bal: float = 0.01

    def validate(self) -> None:
        for field in ("alpha", "beta", "lambda_bal"):
            if getattr(self, field) < 0:
                raise ConfigError(f"LossWeights.{field} must be >= 0")


@dataclass
class LossReport:
    """Scalar loss pieces for one step; total is the exact composition."""

    main: float
    aux: float
    gate: float
    total: float


def cross_entropy(tape: Tape, logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood under a row softmax.

    Args:
        logits: [batch, n_classes] unnormalized scores.
        labels: [batch] integer class ids.

    Returns:
        Scalar tensor; gradient is (softmax - onehot) / batch.

    Raises:
        ContractError: If any label is outside [0, n_classes).
    """
    labels = np.asarray(labels, dtype=np.intp)
    bsz, n_classes = logits.data.shape
    if labels.shape != (bsz,):
        raise ContractError(f"cross_entropy: labels {labels.shape} vs batch {bsz}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"cross_entropy: label outside [0, {n_classes})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    out = Tensor(np.mean(lse - z[np.arange(bsz), labels]))
    soft = np.exp(z - zmax)
    soft /= soft.sum(axis=1, keepdims=True)

    def back(g):
        gz = soft.copy()
        gz[np.arange(bsz), labels] -= 1.0
        return (gz * (g / bsz),)

    return tape.record(out, (logits,), back)


def load_balance_loss(tape: Tape, fractions: Tensor, n_experts: int,
                      lambda_bal: float) -> Tensor:
    """Penalty lambda_bal * sum_i (f_i - 1/N)^2 on routed fractions.

    Exactly zero at the uniform point f_i = 1/N.  The fractions must be
    a valid distribution (they come out of routed_fractions, which
    guarantees it); a sum off by more than 1e-6 is a caller bug.

    Raises:
        ContractError: If the fractions do not sum to 1 within 1e-6.
    """
    f = fractions.data
    if abs(f.sum() - 1.0) > 1e-6:
        raise ContractError(f"load_balance_loss: fractions sum to {f.sum()!r}, not 1")
    dev = f - 1.0 / n_experts
    out = Tensor(lambda_bal * np.dot(dev, dev))

    def back(g):
        return (2.0 * lambda_bal * dev * g,)

    return tape.record(out, (fractions,), back)


def total_loss(tape: Tape, main: Tensor, aux: Tensor, gate: Tensor | None,
               weights: LossWeights) -> tuple[Tensor, LossReport]:
    """Compose total = main + alpha*aux + beta*gate on the tape.

    Args:
        gate: Balance term, or None when the model runs with balance
            disabled; the report then shows gate == 0.0 and the identity
            still holds.

    Returns:
        (total tensor, LossReport with float pieces).
    """
    total = tensor.add(tape, main, tensor.scale(tape, aux, weights.alpha))
    gate_val = 0.0
    if gate is not None:
        total = tensor.add(tape, total, tensor.scale(tape, gate, weights.beta))
        gate_val = gate.item()
    report = LossReport(main=main.item(), aux=aux.item(), gate=gate_val,
                        total=total.item())
    return total, report

"""Optimizers, the training loop, and few-shot adapter tuning.

Training pools all source domains into one shuffled stream of seeded
minibatches.  The trainer keeps a per-domain update count and a purity
counter: any sample from a forbidden (held-out) domain entering an
update increments the counter, so zero-shot claims are checkable after
the fact instead of taken on faith.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import objective, seeds, tensor
from .errors import ConfigError
from .model import YotoNet
from .objective import LossReport, LossWeights
from .tensor import Tape


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")
        self.weights.validate()


@dataclass
class AdapterConfig:
    """Low-rank adapter settings for few-shot target adaptation."""

    rank: int = 4
    scale: float | None = None
    targets: tuple = (
        "moe.expert{i}.W1", "moe.expert{i}.W2", "head.main.W1", "head.main.W2",
    )
    n_shots: int = 256

    def resolve_targets(self, n_experts: int) -> list[str]:
        out = []
        for pattern in self.targets:
            if "{i}" in pattern:
                out.extend(pattern.format(i=i) for i in range(n_experts))
            else:
                out.append(pattern)
        return out


def adam_step(value, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update on raw arrays.

    Args:
        t: 1-based step index after this update.

    Returns:
        (new_value, new_m, new_v); inputs are not mutated.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            p.data[...], self.m[i], self.v[i] = adam_step(
                p.data, p.grad, self.m[i], self.v[i], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )


class SGD:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            p.data -= self.lr * p.grad


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.learning_rate)
    return Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps)


@dataclass
class TrainResult:
    log: list
    domain_updates: dict
    purity_violations: int


def loss_log_csv(log) -> str:
    """Render trainer log rows as epoch,step,main,aux,gate,total."""
    lines = ["epoch,step,main,aux,gate,total"]
    for epoch, step, rep in log:
        lines.append(
            f"{epoch},{step},{rep.main!r},{rep.aux!r},{rep.gate!r},{rep.total!r}"
        )
    return "\n".join(lines) + "\n"


def train(model: YotoNet, x: np.ndarray, y: np.ndarray, domains, cfg: TrainConfig,
          forbidden_domains=(), params=None) -> TrainResult:
    """Optimize ``params`` (default: all model weights) on pooled data.

    Args:
        domains: Per-sample origin names, same length as y.
        forbidden_domains: Domains that must never reach an update; any
            hit is counted (and the sample still trains, so the counter
            is a true audit, not a silent filter).

    Returns:
        TrainResult with one log row per optimizer step.
    """
    cfg.validate()
    domains = np.asarray(list(domains))
    if not (len(x) == len(y) == len(domains)):
        raise ConfigError("train: x, y, domains must be the same length")
    params = model.parameters() if params is None else list(params)
    opt = make_optimizer(params, cfg)
    shuffle_rng = seeds.rng(cfg.seed, "shuffle")
    route_rng = seeds.rng(cfg.seed, "route")
    forbidden = set(forbidden_domains)
    n_experts = model.config.n_experts
    use_balance = not model.config.ablation.no_balance
    log = []
    domain_updates: dict = {}
    violations = 0
    step = 0
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch_domains = domains[idx]
            for name in batch_domains:
                domain_updates[name] = domain_updates.get(name, 0) + 1
                if name in forbidden:
                    violations += 1
            tape = Tape()
            out = model.forward(tape, x[idx], route_rng=route_rng)
            main = objective.cross_entropy(tape, out.main_logits, y[idx])
            aux = objective.cross_entropy(tape, out.aux_logits, y[idx])
            gate = None
            if use_balance:
                gate = objective.load_balance_loss(
                    tape, out.gate.fractions, n_experts, cfg.weights.lambda_bal
                )
            total, report = objective.total_loss(tape, main, aux, gate, cfg.weights)
            for p in params:
                p.zero_grad()
            tensor.backward(tape, total)
            opt.step()
            log.append((epoch, step, report))
            step += 1
    return TrainResult(log=log, domain_updates=domain_updates,
                       purity_violations=violations)


def evaluate(model: YotoNet, x: np.ndarray, y: np.ndarray, batch_size: int = 64,
             route_seed: int = 0):
    """Confusion matrix and expert utilization on held-out data.

    Returns:
        (confusion [C, C] with rows = true class, utilization [N] =
        fraction of routed slots each expert received).
    """
    n_classes = model.config.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.intp)
    counts = np.zeros(model.config.n_experts)
    route_rng = seeds.rng(route_seed, "route", "eval")
    for start in range(0, len(x), batch_size):
        xb = x[start : start + batch_size]
        yb = y[start : start + batch_size]
        out = model.forward(Tape(), xb, route_rng=route_rng)
        preds = np.argmax(out.main_logits.data, axis=1)
        for t, p in zip(yb, preds):
            confusion[t, p] += 1
        counts += out.gate.mask.data.sum(axis=0)
    slots = max(len(x) * model.config.top_k, 1)
    return confusion, counts / slots


def backbone_checksum(model: YotoNet) -> str:
    """Order-sensitive digest of all backbone weights."""
    import hashlib

    h = hashlib.sha256()
    for name, p in model.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def select_shots(y: np.ndarray, n_shots: int, rng) -> np.ndarray:
    """Class-balanced sample of up to n_shots row indices, sorted.

    Returning indices (not rows) lets callers evaluate on the exact
    complement of the adaptation set.
    """
    if n_shots <= 0:
        return np.array([], dtype=np.intp)
    picked = []
    classes = np.unique(y)
    per_class = n_shots // len(classes)
    for c in classes:
        rows = np.flatnonzero(y == c)
        take = min(per_class, rows.size)
        picked.extend(rng.permutation(rows)[:take])
    return np.sort(np.array(picked, dtype=np.intp))


def finetune_adapters(model: YotoNet, x: np.ndarray, y: np.ndarray, domain: str,
                      adapter_cfg: AdapterConfig, train_cfg: TrainConfig) -> TrainResult:
    """Few-shot adaptation: train low-rank adapters, freeze everything else.

    The backbone is frozen for the whole run (its gradients are
    identically zero by construction); with zero shots the model is
    left exactly at its zero-shot state.
    """
    idx = select_shots(y, adapter_cfg.n_shots,
                       seeds.rng(train_cfg.seed, "shots", domain))
    shots_x, shots_y = x[idx], y[idx]
    model.attach_adapters(
        adapter_cfg.resolve_targets(model.config.n_experts),
        adapter_cfg.rank, adapter_cfg.scale,
        seeds.rng(train_cfg.seed, "adapter", domain),
    )
    model.freeze_backbone = True
    if len(shots_x) == 0:
        return TrainResult(log=[], domain_updates={}, purity_violations=0)
    return train(model, shots_x, shots_y, [domain] * len(shots_x), train_cfg,
                 params=model.adapter_parameters())

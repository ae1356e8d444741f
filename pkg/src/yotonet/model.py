"""The diagnosis network: feature distiller + sparse mixture-of-experts.

The distiller runs three dilated conv branches with residual links over
the raw window, pools to a short token sequence, applies channel and
temporal squeeze-excitation, projects tokens to the model width, and
adds a learned projection of the one-sided magnitude spectrum.  A gate
on the mean-pooled token picks top-k experts per sample; only those
experts run.  Two heads read the result: the main head via attention
pooling over the expert output, the auxiliary head via mean pooling
over the pre-expert tokens.

Ablation switches disable individual pieces without changing parameter
construction order, so two models built from the same seed are
weight-identical regardless of flags.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import seeds, signal, tensor
from .errors import ConfigError, ContractError, DataError
from .tensor import Parameter, Tape, Tensor

CHECKPOINT_MAGIC = b"YOTO1"


@dataclass
class AblationFlags:
    """Switches that knock out one mechanism each; all off = full model."""

    random_expert: bool = False
    no_balance: bool = False
    avg_fusion: bool = False
    no_fft: bool = False
    no_dual_attn: bool = False


# canonical variant names used by the ablation harness and CLI
VARIANTS = {
    "Full": AblationFlags(),
    "RandomExpert": AblationFlags(random_expert=True),
    "NoBalance": AblationFlags(no_balance=True),
    "AvgFusion": AblationFlags(avg_fusion=True),
    "NoFFT": AblationFlags(no_fft=True),
    "NoDualAttn": AblationFlags(no_dual_attn=True),
}


@dataclass
class ModelConfig:
    """Architecture hyperparameters; see ``validate`` for the rules."""

    in_len: int = 4096
    branch_kernels: tuple = (3, 5, 7)
    branch_dilations: tuple = (1, 2, 4)
    channels: int = 16
    d_model: int = 64
    n_experts: int = 8
    top_k: int = 2
    expert_hidden: int = 128
    head_hidden: int = 64
    n_classes: int = 2
    pool_stride: int = 32
    se_reduction: int = 4
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        self.branch_kernels = tuple(self.branch_kernels)
        self.branch_dilations = tuple(self.branch_dilations)
        if isinstance(self.ablation, dict):
            self.ablation = AblationFlags(**self.ablation)

    @property
    def n_tokens(self) -> int:
        return self.in_len // self.pool_stride

    def validate(self) -> None:
        if self.in_len <= 0:
            raise ConfigError("in_len must be positive")
        if len(self.branch_kernels) != len(self.branch_dilations):
            raise ConfigError("branch_kernels and branch_dilations must pair up")
        if not self.branch_kernels:
            raise ConfigError("at least one distiller branch is required")
        for k in self.branch_kernels:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"branch kernel {k} must be odd and positive")
        for d in self.branch_dilations:
            if d < 1:
                raise ConfigError(f"branch dilation {d} must be >= 1")
        for name in ("channels", "d_model", "expert_hidden", "head_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.n_experts < 2:
            raise ConfigError("n_experts must be >= 2")
        if not 1 <= self.top_k <= self.n_experts:
            raise ConfigError(f"top_k {self.top_k} outside 1..{self.n_experts}")
        if self.pool_stride < 1 or self.in_len % self.pool_stride != 0:
            raise ConfigError(
                f"pool_stride {self.pool_stride} must divide in_len {self.in_len}"
            )
        if self.se_reduction < 1:
            raise ConfigError("se_reduction must be >= 1")
        if not self.ablation.no_fft and (self.in_len & (self.in_len - 1)) != 0:
            raise ConfigError("in_len must be a power of two for the spectral branch")

    def with_ablation(self, flags: AblationFlags) -> "ModelConfig":
        return replace(self, ablation=flags)


@dataclass
class GateOutput:
    """Routing result for one batch.

    probs rows sum to 1; mask rows hold exactly top_k ones; selected
    lists the chosen expert indices per sample; fractions is the
    hard-count routing distribution over experts (sums to 1).
    """

    probs: Tensor
    mask: Tensor
    selected: list
    fractions: Tensor


@dataclass
class ModelOutput:
    main_logits: Tensor
    aux_logits: Tensor
    gate: GateOutput


class YotoNet:
    """The full network; all weights live in one flat name->Parameter map.

    Weight matrices and conv kernels are He-uniform from the "init"
    stream of ``seed``; biases, the gate, and the attention-pool vector
    start at zero (zero gate = uniform routing, zero pool vector = plain
    mean pooling), so early training is unbiased across experts.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self.params: dict[str, Parameter] = {}
        self.adapters: dict[str, tuple[Parameter, Parameter, float]] = {}
        self.freeze_backbone = False
        self.last_expert_calls = 0
        self.total_expert_calls = 0
        self._route_rng = seeds.rng(seed, "route")
        rng = seeds.rng(seed, "init")
        cfg = config
        c_cat = cfg.channels * len(cfg.branch_kernels)
        t = cfg.n_tokens

        def he(name, shape, fan_in):
            bound = np.sqrt(6.0 / fan_in)
            self.params[name] = Parameter(rng.uniform(-bound, bound, shape), name)

        def zeros(name, shape):
            self.params[name] = Parameter(np.zeros(shape), name)

        for i, (k, _) in enumerate(zip(cfg.branch_kernels, cfg.branch_dilations)):
            he(f"distill.branch{i}.conv", (cfg.channels, 1, k), k)
            he(f"distill.branch{i}.res", (cfg.channels, 1, 1), 1)
        for prefix, width in (("se_ch", c_cat), ("se_time", t)):
            hidden = max(1, width // cfg.se_reduction)
            he(f"distill.{prefix}.W1", (width, hidden), width)
            zeros(f"distill.{prefix}.b1", (hidden,))
            he(f"distill.{prefix}.W2", (hidden, width), hidden)
            zeros(f"distill.{prefix}.b2", (width,))
        he("distill.proj.W", (c_cat, cfg.d_model), c_cat)
        zeros("distill.proj.b", (cfg.d_model,))
        he("distill.fft.W", (cfg.in_len // 2, cfg.d_model), cfg.in_len // 2)
        zeros("distill.fft.b", (cfg.d_model,))
        zeros("moe.gate.W", (cfg.d_model, cfg.n_experts))
        for i in range(cfg.n_experts):
            he(f"moe.expert{i}.W1", (cfg.d_model, cfg.expert_hidden), cfg.d_model)
            zeros(f"moe.expert{i}.b1", (cfg.expert_hidden,))
            he(f"moe.expert{i}.W2", (cfg.expert_hidden, cfg.d_model), cfg.expert_hidden)
            zeros(f"moe.expert{i}.b2", (cfg.d_model,))
        zeros("head.attn.w", (cfg.d_model,))
        he("head.main.W1", (cfg.d_model, cfg.head_hidden), cfg.d_model)
        zeros("head.main.b1", (cfg.head_hidden,))
        he("head.main.W2", (cfg.head_hidden, cfg.n_classes), cfg.head_hidden)
        zeros("head.main.b2", (cfg.n_classes,))
        he("head.aux.W", (cfg.d_model, cfg.n_classes), cfg.d_model)
        zeros("head.aux.b", (cfg.n_classes,))

    # -- parameter access ------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def adapter_parameters(self) -> list[Parameter]:
        out = []
        for a, b, _ in self.adapters.values():
            out.extend([a, b])
        return out

    def _leaf(self, name: str):
        """Parameter, or a constant view of it while the backbone is frozen."""
        p = self.params[name]
        if self.freeze_backbone:
            return Tensor(p.data)
        return p

    def _dense(self, tape: Tape, x: Tensor, wname: str, bname: str | None) -> Tensor:
        """Apply the named dense layer, plus its low-rank adapter if any."""
        w = self._leaf(wname)
        b = self._leaf(bname) if bname else None
        out = tensor.linear(tape, x, w, b)
        if wname in self.adapters:
            a, bmat, sc = self.adapters[wname]
            delta = tensor.matmul(tape, tensor.matmul(tape, x, a), bmat)
            out = tensor.add(tape, out, tensor.scale(tape, delta, sc))
        return out

    # -- forward pieces --------------------------------------------------

    def dual_attention(self, tape: Tape, x: Tensor) -> Tensor:
        """Channel and temporal squeeze-excitation over a [B, C, T] map.

        Both gates are computed from the same input and composed
        multiplicatively: out[b,c,t] = x[b,c,t] * s_ch[b,c] * s_time[b,t].
        """

        def gate(pooled, prefix):
            h = tensor.relu(
                tape,
                self._dense(tape, pooled, f"distill.{prefix}.W1", f"distill.{prefix}.b1"),
            )
            return tensor.sigmoid(
                tape,
                self._dense(tape, h, f"distill.{prefix}.W2", f"distill.{prefix}.b2"),
            )

        b, c, t = x.data.shape
        s_ch = gate(tensor.mean_axis(tape, x, 2), "se_ch")
        s_time = gate(tensor.mean_axis(tape, x, 1), "se_time")
        out = tensor.mul(tape, x, tensor.reshape(tape, s_ch, (b, c, 1)))
        return tensor.mul(tape, out, tensor.reshape(tape, s_time, (b, 1, t)))

    def distill(self, tape: Tape, x) -> Tensor:
        """Raw windows [B, in_len] -> token sequence [B, T, d_model]."""
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != cfg.in_len:
            raise ContractError(
                f"distill: expected [batch, {cfg.in_len}], got {x.data.shape}"
            )
        bsz = x.data.shape[0]
        x3 = tensor.reshape(tape, x, (bsz, 1, cfg.in_len))
        branches = []
        for i, (k, dil) in enumerate(zip(cfg.branch_kernels, cfg.branch_dilations)):
            h = tensor.relu(
                tape,
                tensor.conv1d_dilated(tape, x3, self._leaf(f"distill.branch{i}.conv"), dil),
            )
            res = tensor.conv1d_dilated(tape, x3, self._leaf(f"distill.branch{i}.res"), 1)
            branches.append(tensor.add(tape, h, res))
        cat = tensor.concat(tape, branches, axis=1)
        pooled = tensor.avg_pool1d(tape, cat, cfg.pool_stride)
        if not cfg.ablation.no_dual_attn:
            pooled = self.dual_attention(tape, pooled)
        tok = tensor.transpose(tape, pooled, (0, 2, 1))
        c_cat = cfg.channels * len(cfg.branch_kernels)
        flat = tensor.reshape(tape, tok, (bsz * cfg.n_tokens, c_cat))
        tokens = tensor.reshape(
            tape, self._dense(tape, flat, "distill.proj.W", "distill.proj.b"),
            (bsz, cfg.n_tokens, cfg.d_model),
        )
        if not cfg.ablation.no_fft:
            spec = np.stack([signal.magnitude_spectrum(row) for row in x.data])
            s = self._dense(tape, Tensor(spec), "distill.fft.W", "distill.fft.b")
            tokens = tensor.add(tape, tokens, tensor.reshape(tape, s, (bsz, 1, cfg.d_model)))
        return tokens

    def route(self, tape: Tape, z: Tensor, route_rng=None, fixed_mask=None) -> GateOutput:
        """Pick top_k experts per sample from the pooled token z [B, d].

        With random_expert the probabilities are still computed and
        reported, but the mask is a seeded uniform k-subset per sample.
        A fixed_mask (constant 0/1 array) bypasses selection entirely;
        gradient checks use it to hold routing constant.
        """
        cfg = self.config
        logits = self._dense(tape, z, "moe.gate.W", None)
        probs = tensor.softmax(tape, logits)
        if fixed_mask is not None:
            mask = Tensor(np.asarray(fixed_mask, dtype=np.float64))
        elif cfg.ablation.random_expert:
            rng = route_rng if route_rng is not None else self._route_rng
            m = np.zeros((z.data.shape[0], cfg.n_experts))
            for row in m:
                row[rng.choice(cfg.n_experts, size=cfg.top_k, replace=False)] = 1.0
            mask = Tensor(m)
        else:
            mask = tensor.topk_mask(tape, probs, cfg.top_k)
        selected = [list(np.flatnonzero(row)) for row in mask.data]
        fractions = tensor.routed_fractions(tape, probs, mask, cfg.top_k)
        return GateOutput(probs=probs, mask=mask, selected=selected, fractions=fractions)

    def expert_forward(self, tape: Tape, index: int, z: Tensor) -> Tensor:
        """Run expert ``index`` tokenwise on [n, d] or [n, T, d] input."""
        cfg = self.config
        if not 0 <= index < cfg.n_experts:
            raise ConfigError(f"expert index {index} outside 0..{cfg.n_experts - 1}")
        shape = z.data.shape
        flat = z if z.data.ndim == 2 else tensor.reshape(
            tape, z, (shape[0] * shape[1], shape[2])
        )
        h = tensor.relu(
            tape,
            self._dense(tape, flat, f"moe.expert{index}.W1", f"moe.expert{index}.b1"),
        )
        out = self._dense(tape, h, f"moe.expert{index}.W2", f"moe.expert{index}.b2")
        self.last_expert_calls += shape[0]
        self.total_expert_calls += shape[0]
        if z.data.ndim == 3:
            out = tensor.reshape(tape, out, shape)
        return out

    def moe_forward(self, tape: Tape, tokens: Tensor, gate: GateOutput) -> Tensor:
        """Weighted sum of selected expert outputs, skipping the rest.

        Only experts with at least one routed sample run, and each runs
        on just its routed rows, so the invocation counter comes out to
        exactly batch * top_k.  With avg_fusion every expert runs on the
        whole batch and the outputs are averaged with weight 1/N.
        """
        cfg = self.config
        bsz = tokens.data.shape[0]
        self.last_expert_calls = 0
        if cfg.ablation.avg_fusion:
            acc = None
            for i in range(cfg.n_experts):
                h = self.expert_forward(tape, i, tokens)
                acc = h if acc is None else tensor.add(tape, acc, h)
            return tensor.scale(tape, acc, 1.0 / cfg.n_experts)
        out = None
        for i in range(cfg.n_experts):
            rows = np.flatnonzero(gate.mask.data[:, i] == 1.0)
            if rows.size == 0:
                continue
            sub = tensor.take_rows(tape, tokens, rows)
            h = self.expert_forward(tape, i, sub)
            w = tensor.take_rows(tape, tensor.select_column(tape, gate.probs, i), rows)
            h = tensor.mul(tape, h, tensor.reshape(tape, w, (rows.size, 1, 1)))
            placed = tensor.scatter_rows(tape, h, rows, bsz)
            out = placed if out is None else tensor.add(tape, out, placed)
        return out

    def classify(self, tape: Tape, moe_tokens: Tensor, pre_tokens: Tensor):
        """Main head on expert output, auxiliary head on pre-expert tokens."""
        pooled = tensor.pool_attention(tape, moe_tokens, self._leaf("head.attn.w"))
        h = tensor.relu(
            tape, self._dense(tape, pooled, "head.main.W1", "head.main.b1")
        )
        main = self._dense(tape, h, "head.main.W2", "head.main.b2")
        aux = self._dense(
            tape, tensor.pool_mean(tape, pre_tokens), "head.aux.W", "head.aux.b"
        )
        return main, aux

    def forward(self, tape: Tape, x, route_rng=None, fixed_mask=None) -> ModelOutput:
        tokens = self.distill(tape, x)
        zbar = tensor.pool_mean(tape, tokens)
        gate = self.route(tape, zbar, route_rng=route_rng, fixed_mask=fixed_mask)
        moe_out = self.moe_forward(tape, tokens, gate)
        main, aux = self.classify(tape, moe_out, tokens)
        return ModelOutput(main_logits=main, aux_logits=aux, gate=gate)

    # -- adapters ----------------------------------------------------------

    def attach_adapters(self, targets, rank: int, scale: float | None, rng) -> None:
        """Add low-rank adapters (A random, B zero) to named weight matrices.

        Targets are weight parameter names such as "moe.expert3.W1".
        With B zero the adapted model computes exactly the base model
        until the first update.  ``scale`` defaults to 1/rank.

        Raises:
            ConfigError: On an unknown/non-matrix target or rank < 1.
        """
        if rank < 1:
            raise ConfigError(f"adapter rank {rank} must be >= 1")
        sc = (1.0 / rank) if scale is None else float(scale)
        for wname in targets:
            if wname not in self.params or self.params[wname].data.ndim != 2:
                raise ConfigError(f"adapter target {wname!r} is not a weight matrix")
            n_in, _ = self.params[wname].data.shape
            bound = np.sqrt(6.0 / n_in)
            a = Parameter(rng.uniform(-bound, bound, (n_in, rank)), f"adapter.{wname}.A")
            b = Parameter(np.zeros((rank, self.params[wname].data.shape[1])),
                          f"adapter.{wname}.B")
            self.adapters[wname] = (a, b, sc)

    # -- persistence -------------------------------------------------------

    def state(self) -> list[tuple[str, np.ndarray]]:
        items = [(name, p.data) for name, p in self.params.items()]
        for lname, (a, b, sc) in self.adapters.items():
            items.append((a.name, a.data))
            items.append((b.name, b.data))
            items.append((f"adapter.{lname}.scale", np.array([sc])))
        return items

    def save(self, path) -> None:
        save_checkpoint(path, self.state())

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        """Overwrite weights (and adapters) from a checkpoint dict.

        Raises:
            ContractError: On missing names or shape mismatches.
        """
        for name, p in self.params.items():
            if name not in tensors:
                raise ContractError(f"checkpoint is missing parameter {name!r}")
            if tensors[name].shape != p.data.shape:
                raise ContractError(
                    f"checkpoint shape {tensors[name].shape} != {p.data.shape} "
                    f"for {name!r}"
                )
            p.data[...] = tensors[name]
        layer_names = {
            key[len("adapter."):-2] for key in tensors if key.startswith("adapter.")
            and key.endswith(".A")
        }
        for lname in sorted(layer_names):
            a = tensors[f"adapter.{lname}.A"]
            b = tensors[f"adapter.{lname}.B"]
            sc = float(tensors[f"adapter.{lname}.scale"][0])
            pa = Parameter(a, f"adapter.{lname}.A")
            pb = Parameter(b, f"adapter.{lname}.B")
            self.adapters[lname] = (pa, pb, sc)


def save_checkpoint(path, items) -> None:
    """Write named float64 tensors: magic, then per tensor a u32 name
    length, UTF-8 name, u32 rank, u64 extents, and raw little-endian
    float64 values."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in items:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        DataError: On a bad magic string or truncated stream.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic {blob[:5]!r}")
    out: dict[str, np.ndarray] = {}
    pos = 5

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise DataError(f"{path}: truncated checkpoint")
        piece = blob[pos : pos + n]
        pos += n
        return piece

    while pos < len(blob):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = tuple(
            struct.unpack("<Q", take(8))[0] for _ in range(rank)
        )
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(count * 8), dtype="<f8").reshape(shape).copy()
        out[name] = arr
    return out

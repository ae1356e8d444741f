"""Run configuration: strict JSON parsing plus the committed profiles.

A run config is a single JSON object with nested model/train/weights
sections.  Unknown keys anywhere are rejected with the full key path,
because a silently ignored typo ("learnig_rate") would change an
experiment without leaving a trace.  Parsing fills omitted keys from
the committed defaults, so parse -> serialize -> parse is idempotent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

from .data import DOMAIN_SPECS, SyntheticDomainSpec
from .errors import ConfigError, DataError
from .model import AblationFlags, ModelConfig
from .objective import LossWeights
from .training import TrainConfig


def _coerce(value, typ, path):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {path}: expected a number")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {path}: expected an integer")
        return value
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {path}: expected true/false")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"config key {path}: expected a string")
        return value
    return value


_FIELD_TYPES = {
    "int": int, "float": float, "bool": bool, "str": str,
}


def _build(cls, doc, path, defaults):
    """Dataclass instance from a JSON dict, strict about key names."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config key {path[:-1]}: expected an object")
    by_name = {f.name: f for f in fields(cls)}
    for key in doc:
        if key not in by_name:
            raise ConfigError(f"unknown config key {path}{key}")
    kwargs = {}
    for name, f in by_name.items():
        if name in doc:
            key = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
            kwargs[name] = _coerce(doc[name], _FIELD_TYPES.get(key), f"{path}{name}")
        else:
            kwargs[name] = getattr(defaults, name)
    return cls(**kwargs)


def _build_model(doc, path, defaults):
    doc = dict(doc) if isinstance(doc, dict) else doc
    if not isinstance(doc, dict):
        raise ConfigError(f"config key {path[:-1]}: expected an object")
    ablation_doc = doc.pop("ablation", None)
    for key in ("branch_kernels", "branch_dilations"):
        if key in doc:
            if (not isinstance(doc[key], list)
                    or not all(isinstance(v, int) for v in doc[key])):
                raise ConfigError(f"config key {path}{key}: expected a list of integers")
            doc[key] = tuple(doc[key])
    cfg = _build(ModelConfig, doc, path, defaults)
    if ablation_doc is not None:
        flags = _build(AblationFlags, ablation_doc, path + "ablation.",
                       defaults.ablation)
        cfg = replace(cfg, ablation=flags)
    return cfg


def _build_train(doc, path, defaults):
    if isinstance(doc, dict) and "weights" in doc:
        raise ConfigError(
            f"config key {path}weights: loss weights belong at the top level"
        )
    return _build(TrainConfig, doc, path, defaults)


@dataclass
class RunConfig:
    """Everything one command needs: architecture, budget, paths, seed."""

    model: ModelConfig
    train: TrainConfig
    weights: LossWeights
    data_dir: str
    out_dir: str
    domains: tuple
    seed: int

    def __post_init__(self):
        self.domains = tuple(str(d) for d in self.domains)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.weights.validate()
        if len(set(self.domains)) != len(self.domains):
            raise ConfigError("config key domains: duplicate names")
        if not self.domains:
            raise ConfigError("config key domains: must not be empty")

    def train_config(self) -> TrainConfig:
        """The train section with the top-level loss weights applied."""
        return replace(self.train, weights=self.weights)

    def to_dict(self) -> dict:
        model = {
            "in_len": self.model.in_len,
            "branch_kernels": list(self.model.branch_kernels),
            "branch_dilations": list(self.model.branch_dilations),
            "channels": self.model.channels,
            "d_model": self.model.d_model,
            "n_experts": self.model.n_experts,
            "top_k": self.model.top_k,
            "expert_hidden": self.model.expert_hidden,
            "head_hidden": self.model.head_hidden,
            "n_classes": self.model.n_classes,
            "pool_stride": self.model.pool_stride,
            "se_reduction": self.model.se_reduction,
            "ablation": {
                "random_expert": self.model.ablation.random_expert,
                "no_balance": self.model.ablation.no_balance,
                "avg_fusion": self.model.ablation.avg_fusion,
                "no_fft": self.model.ablation.no_fft,
                "no_dual_attn": self.model.ablation.no_dual_attn,
            },
        }
        train = {
            "epochs": self.train.epochs,
            "batch_size": self.train.batch_size,
            "learning_rate": self.train.learning_rate,
            "optimizer": self.train.optimizer,
            "adam_beta1": self.train.adam_beta1,
            "adam_beta2": self.train.adam_beta2,
            "adam_eps": self.train.adam_eps,
            "seed": self.train.seed,
        }
        weights = {
            "alpha": self.weights.alpha,
            "beta": self.weights.beta,
            "lambda_bal": self.weights.lambda_bal,
        }
        return {
            "model": model, "train": train, "weights": weights,
            "data_dir": self.data_dir, "out_dir": self.out_dir,
            "domains": list(self.domains), "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def default_run() -> RunConfig:
    """The committed benchmark profile: full-length windows, 30 epochs.

    A complete 30-split protocol run at this profile finishes in a few
    minutes on one desktop core.
    """
    return RunConfig(
        model=ModelConfig(in_len=4096, channels=8, d_model=32, n_experts=4,
                          top_k=2, expert_hidden=32, head_hidden=32,
                          pool_stride=32),
        train=TrainConfig(epochs=30, batch_size=16, learning_rate=1e-3, seed=0),
        weights=LossWeights(),
        data_dir="data",
        out_dir="out",
        domains=tuple(DOMAIN_SPECS),
        seed=0,
    )


def fast_run() -> RunConfig:
    """Reduced-budget profile for quick sweeps and the test suite."""
    cfg = default_run()
    return replace(cfg, model=replace(cfg.model, in_len=2048),
                   train=replace(cfg.train, epochs=20))


def parse_run_config(doc: dict, defaults: RunConfig | None = None) -> RunConfig:
    """Strict RunConfig from a parsed JSON object.

    Raises:
        ConfigError: On unknown keys (with their path) or wrong types.
    """
    if not isinstance(doc, dict):
        raise ConfigError("run config: expected a JSON object at the top level")
    base = default_run() if defaults is None else defaults
    allowed = {"model", "train", "weights", "data_dir", "out_dir", "domains", "seed"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key}")
    model = _build_model(doc.get("model", {}), "model.", base.model)
    train = _build_train(doc.get("train", {}), "train.", base.train)
    weights = _build(LossWeights, doc.get("weights", {}), "weights.", base.weights)
    domains = doc.get("domains", list(base.domains))
    if not isinstance(domains, list) or not all(isinstance(d, str) for d in domains):
        raise ConfigError("config key domains: expected a list of strings")
    cfg = RunConfig(
        model=model, train=train, weights=weights,
        data_dir=_coerce(doc.get("data_dir", base.data_dir), str, "data_dir"),
        out_dir=_coerce(doc.get("out_dir", base.out_dir), str, "out_dir"),
        domains=tuple(domains),
        seed=_coerce(doc.get("seed", base.seed), int, "seed"),
    )
    cfg.validate()
    return cfg


@dataclass
class SynthSpec:
    """Generation request: which domains, how many windows, how long."""

    window: int
    n_per_class: int
    domains: tuple

    def validate(self) -> None:
        if self.window < 2:
            raise ConfigError("config key window: must be >= 2")
        if self.n_per_class < 1:
            raise ConfigError("config key n_per_class: must be >= 1")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ConfigError("config key domains: duplicate names")
        for d in self.domains:
            d.validate()

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "n_per_class": self.n_per_class,
            "domains": [
                {
                    "name": d.name, "shaft_hz": d.shaft_hz,
                    "bpfi_ratio": d.bpfi_ratio, "bpfo_ratio": d.bpfo_ratio,
                    "resonance_hz": d.resonance_hz, "decay": d.decay,
                    "snr_db": d.snr_db, "transfer_gain": d.transfer_gain,
                    "seed": d.seed, "mod_depth": d.mod_depth,
                    "jitter": d.jitter, "speed_spread": d.speed_spread,
                }
                for d in self.domains
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def default_synth() -> SynthSpec:
    """The committed five-domain benchmark at full window length."""
    return SynthSpec(window=4096, n_per_class=16,
                     domains=tuple(DOMAIN_SPECS.values()))


def fast_synth() -> SynthSpec:
    """Smaller windows and fewer segments for quick runs."""
    return SynthSpec(window=2048, n_per_class=12,
                     domains=tuple(DOMAIN_SPECS.values()))


def parse_synth_spec(doc: dict) -> SynthSpec:
    """Strict SynthSpec from a parsed JSON object."""
    if not isinstance(doc, dict):
        raise ConfigError("synth spec: expected a JSON object at the top level")
    base = default_synth()
    for key in doc:
        if key not in {"window", "n_per_class", "domains"}:
            raise ConfigError(f"unknown config key {key}")
    window = _coerce(doc.get("window", base.window), int, "window")
    n_per_class = _coerce(doc.get("n_per_class", base.n_per_class), int,
                          "n_per_class")
    domains = base.domains
    if "domains" in doc:
        if not isinstance(doc["domains"], list):
            raise ConfigError("config key domains: expected a list")
        built = []
        for i, entry in enumerate(doc["domains"]):
            built.append(_build(SyntheticDomainSpec, entry, f"domains[{i}].",
                                _SPEC_DEFAULTS))
        domains = tuple(built)
    spec = SynthSpec(window=window, n_per_class=n_per_class, domains=domains)
    spec.validate()
    return spec


# field defaults for spec-file entries that omit the optional knobs
_SPEC_DEFAULTS = SyntheticDomainSpec(
    name="", shaft_hz=0.0, bpfi_ratio=0.0, bpfo_ratio=0.0, resonance_hz=0.0,
    decay=0.0, snr_db=0.0, transfer_gain=0.0, seed=0,
)


def load_json(path):
    """JSON document from disk; I/O issues are data errors, syntax is config."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc

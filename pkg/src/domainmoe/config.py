"""Run configuration: architecture, stage budgets, data paths.

Configs are flat key-value text with sections and JSON-compatible values
(INI syntax parsed through json.loads), or plain JSON files.  Every run
writes its fully resolved config beside its outputs.
"""

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ModelConfig:
    # architecture (defaults are desk scale; full scale is 6 layers, d=512,
    # 8 heads, 12 experts with inner dim 128)
    num_layers: int = 2
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    max_len: int = 64
    # experts / routing
    num_experts: int = 4
    expert_inner_dim: int = 32
    routing_k: int = 2
    temperature: float = 1.0
    route_per_layer: bool = False
    # optimizer / schedule
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    peak_lr: float = 0.0007
    warmup_steps: int = 4000
    grad_clip: float = 0.0
    dropout: float = 0.0
    grad_accum: int = 1
    # vocab sizes are filled in from the corpus at training time
    src_vocab_size: int = 0
    tgt_vocab_size: int = 0
    joint_vocab: bool = False
    seed: int = 0

    def validate(self):
        if self.model_dim % self.num_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.num_experts < 1:
            raise ValueError("num_experts must be >= 1")
        if not 1 <= self.routing_k <= self.num_experts:
            raise ValueError(
                f"routing_k {self.routing_k} outside [1, {self.num_experts}]")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    # stage budgets (desk scale; full scale is backbone 100k, discriminator 6k)
    backbone_steps: int = 1500
    discriminator_steps: int = 800
    expert_steps: int = 800
    batch_size: int = 32
    eval_every: int = 200
    patience: int = 5
    disc_peak_lr: float = 0.01
    disc_warmup_steps: int = 100
    # clustering / discriminator dataset
    cluster_method: str = "gmm"  # gmm | kmeans
    pca_dim: int = 64
    sample_count: int = 2000
    anchors_path: str = ""
    # data: either explicit corpus files or a generator spec
    corpus_dir: str = ""
    generator_spec: dict = field(default_factory=dict)
    # decoding / evaluation
    beam_size: int = 5
    # bookkeeping
    out_dir: str = "run"
    seed: int = 0
    checked: bool = False
    sweep: dict = field(default_factory=dict)

    def validate(self):
        if self.cluster_method not in ("gmm", "kmeans"):
            raise ValueError(f"unknown cluster_method {self.cluster_method!r}")
        self.model.validate()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)}
_RUN_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def _from_flat(items):
    cfg = RunConfig()
    for key, value in items:
        if key in ("model", "generator_spec", "sweep") and isinstance(value, dict):
            if key == "model":
                for k, v in value.items():
                    if k not in _MODEL_FIELDS:
                        raise KeyError(f"unknown model config key {k!r}")
                    setattr(cfg.model, k, v)
            else:
                setattr(cfg, key, value)
        elif key in _MODEL_FIELDS:
            setattr(cfg.model, key, value)
        elif key in _RUN_FIELDS:
            setattr(cfg, key, value)
        else:
            raise KeyError(f"unknown config key {key!r}")
    return cfg


def load_config(path):
    """Load a RunConfig from .json or sectioned key=value text."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        return _from_flat(data.items())
    parser = configparser.ConfigParser()
    parser.read_string(text)
    cfg = RunConfig()
    sweep = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            if section == "sweep":
                sweep[key] = value
            elif key in _MODEL_FIELDS:
                setattr(cfg.model, key, value)
            elif key in _RUN_FIELDS:
                setattr(cfg, key, value)
            else:
                raise KeyError(f"unknown config key {key!r} in section [{section}]")
    cfg.sweep = sweep
    return cfg


def config_from_dict(data):
    cfg = RunConfig()
    for key, value in data.items():
        if key == "model":
            for k, v in value.items():
                setattr(cfg.model, k, v)
        elif key in _RUN_FIELDS:
            setattr(cfg, key, value)
        elif key in _MODEL_FIELDS:
            setattr(cfg.model, key, value)
        else:
            raise KeyError(f"unknown config key {key!r}")
    return cfg

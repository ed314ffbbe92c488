"""Run configuration: every pipeline hyperparameter in one validated record.

Defaults are the full-scale settings; ``RunConfig.desk()`` swaps in the
small dimensions used by fixtures and CI. Configs are read from a plain
``key = value`` text file (``#`` comments allowed) with CLI-flag overrides,
and every artifact embeds the config hash for provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigInvalid

CONFIG_ENV_VAR = "SGRETRIEVAL_CONFIG"


@dataclass
class RunConfig:
    seed: int = 7

    # fixture dims (declared per manifest; these drive synth generation)
    d_text: int = 32
    d_vis: int = 32
    d_g: int = 16

    # importance scorer
    imp_layers: int = 3
    imp_hidden: int = 1536
    imp_heads: int = 32
    imp_queries: int = 4
    prune_threshold: float = 0.4

    # retrieval model
    gnn_layers: int = 3
    gnn_hidden: int = 64
    gnn_heads: int = 4
    alpha: float = 0.7
    vis_hidden: int = 64
    d_vis_out: int = 32
    d_graph_out: int = 32
    reverse_edges: bool = False
    edge_aware: bool = True

    # training
    epochs: int = 60
    base_lr: float = 1e-4
    lr_gamma: float = 0.9
    warmup_epochs: int = 20
    batch_size: int = 32
    dropout: float = 0.1
    pairs_per_image: int = 64
    batch_pairs: int = 0       # 0: one optimizer step per epoch over the sample
    jobs: int = 1

    @classmethod
    def desk(cls, **overrides) -> "RunConfig":
        """Small-scale settings: same code paths, tractable runtimes.

        The LR schedule decay is disabled and the rate raised because toy
        runs take hundreds of epochs on dozens of samples, where the
        full-scale decay constants would freeze training long before
        convergence.
        """
        base = dict(
            imp_layers=2, imp_hidden=64, imp_heads=4,
            epochs=200, base_lr=3e-3, lr_gamma=1.0, warmup_epochs=0,
            batch_size=64,
        )
        base.update(overrides)
        return cls(**base)

    def validate(self) -> "RunConfig":
        checks = [
            (self.d_text > 0 and self.d_vis > 0 and self.d_g > 0, "dims must be positive"),
            (self.imp_hidden % self.imp_heads == 0,
             f"imp_hidden {self.imp_hidden} not divisible by imp_heads {self.imp_heads}"),
            (self.gnn_hidden % self.gnn_heads == 0,
             f"gnn_hidden {self.gnn_hidden} not divisible by gnn_heads {self.gnn_heads}"),
            (self.imp_layers >= 1 and self.gnn_layers >= 1, "layer counts must be >= 1"),
            (self.imp_queries >= 1, "need at least one learned query"),
            (0.0 <= self.dropout < 1.0, f"dropout {self.dropout} outside [0, 1)"),
            (self.alpha > 0, "alpha must be positive"),
            (self.base_lr > 0, "base_lr must be positive"),
            (0.0 < self.lr_gamma <= 1.0, f"lr_gamma {self.lr_gamma} outside (0, 1]"),
            (self.warmup_epochs >= 0, "warmup_epochs must be >= 0"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.pairs_per_image >= 1, "pairs_per_image must be >= 1"),
            (self.batch_pairs >= 0, "batch_pairs must be >= 0"),
            (self.jobs >= 1, "jobs must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigInvalid(msg)
        return self

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}"
                 for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]


def _coerce(name: str, raw: str, kind) -> object:
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigInvalid(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    values = dataclasses.asdict(base or RunConfig())
    kinds = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    types = {"int": int, "float": float, "bool": bool}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in kinds:
            raise ConfigInvalid(f"line {lineno}: unknown config key {key!r}")
        kind = types.get(kinds[key], kinds[key]) if isinstance(kinds[key], str) else kinds[key]
        values[key] = _coerce(key, raw, kind)
    return RunConfig(**values).validate()


def load_config(path: str | os.PathLike | None = None,
                overrides: dict | None = None, desk: bool = False) -> RunConfig:
    """Config from (optional) file plus overrides; env var names the default file."""
    base = RunConfig.desk() if desk else RunConfig()
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path:
        path = Path(path)
        if not path.is_file():
            raise ConfigInvalid(f"config file not found: {path}")
        base = parse_config_text(path.read_text(encoding="utf-8"), base)
    if overrides:
        values = dataclasses.asdict(base)
        values.update({k: v for k, v in overrides.items() if v is not None})
        base = RunConfig(**values)
    return base.validate()

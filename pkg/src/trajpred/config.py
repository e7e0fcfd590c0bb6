"""Run configuration: one flat record that every stage of the pipeline reads from.

A config fully determines model shapes, initialization seeds, data location
and training hyperparameters, so a (config, dataset) pair pins down a run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .utils import canonical_json, digest


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration values."""


@dataclass
class RunConfig:
    # clip geometry
    t_frames: int = 8
    height: int = 32
    width: int = 32
    channels: int = 3
    patch: int = 8

    # embedding widths
    d_v: int = 64
    d_t: int = 64

    # predictor
    pred_depth: int = 4
    pred_heads: int = 4
    n_query: int = 4
    pool_mode: str = "all"  # "all" | "query"

    # trajectory branch
    use_trajectory: bool = True
    k_max: int = 4
    pool_depth: int = 2
    pool_heads: int = 8

    # text branch
    txt_depth: int = 2
    txt_heads: int = 4
    m_context: int = 4
    prompt_mode: str = "rephrased"  # "raw" | "rephrased"

    # scoring: cosine similarities are multiplied by this before the sigmoid.
    # Unit cosines cap sigmoid outputs at ~0.73, far above the ~5% per-class
    # base rate, so training at scale 1 stalls on a common-mode offset; 10
    # lets per-class probabilities actually reach the label statistics.
    logit_scale: float = 10.0

    # optimization
    lr_predictor: float = 5e-5
    lr_trajectory: float = 1e-4
    lr_text_context: float = 2.5e-6
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    steps_per_stage: int = 1500
    checkpoint_every: int = 0  # 0 disables periodic snapshots

    # data
    data_dir: str = "data"
    sigma_box: float = 0.0  # box jitter applied when regenerating detections

    # seeding
    seed: int = 42

    def validate(self) -> None:
        if self.t_frames < 1:
            raise ConfigError("t_frames must be positive")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(
                f"frame {self.height}x{self.width} not divisible by patch {self.patch}"
            )
        if self.d_v % 8:
            raise ConfigError("d_v must be a multiple of 8")
        if self.d_v % self.pred_heads or self.d_v % self.pool_heads:
            raise ConfigError("d_v must divide evenly across attention heads")
        if self.d_t % self.txt_heads:
            raise ConfigError("d_t must divide evenly across text attention heads")
        if self.pool_mode not in ("all", "query"):
            raise ConfigError(f"unknown pool_mode {self.pool_mode!r}")
        if self.prompt_mode not in ("raw", "rephrased"):
            raise ConfigError(f"unknown prompt_mode {self.prompt_mode!r}")
        if self.k_max < 0:
            raise ConfigError("k_max must be >= 0")
        if self.n_query < 1:
            raise ConfigError("n_query must be >= 1")
        if self.batch_size < 1 or self.steps_per_stage < 0:
            raise ConfigError("batch_size must be >= 1 and steps_per_stage >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.logit_scale <= 0:
            raise ConfigError("logit_scale must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(d)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(canonical_json(self.to_dict()))
            f.write("\n")

    def digest(self) -> str:
        return digest(self.to_dict())

    def replace(self, **kw) -> "RunConfig":
        cfg = dataclasses.replace(self, **kw)
        cfg.validate()
        return cfg

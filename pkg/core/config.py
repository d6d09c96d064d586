import json
from enum import Enum
from pathlib import Path
from typing import Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Variant(str, Enum):
    """Ablation variants: which of the two causal modules sit between fusion and regression."""

    BASELINE = "baseline"
    GAT_ONLY = "gat_only"
    TCA_ONLY = "tca_only"
    FULL = "full"

    @property
    def uses_gat(self) -> bool:
        return self in (Variant.GAT_ONLY, Variant.FULL)

    @property
    def uses_tca(self) -> bool:
        return self in (Variant.TCA_ONLY, Variant.FULL)


class GenConfig(BaseModel):
    """Synthetic benchmark settings. Defaults follow the 9-snippet split used for diving clips."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 0
    n_train: int = Field(800, ge=0)
    n_test: int = Field(200, ge=0)
    snippets: int = Field(9, ge=3)
    feature_dim: int = Field(16, ge=4)
    mask_dim: int = Field(4, ge=1)
    score_min: float = 0.0
    score_max: float = 100.0
    c_train: float = Field(0.0, ge=0.0, le=1.0)
    c_test: float = Field(0.0, ge=0.0, le=1.0)
    boundary_jitter: int = Field(1, ge=0)
    n_action_types: int = Field(3, ge=1)
    noise_std: float = Field(0.05, ge=0.0)
    stage_score_weights: Tuple[float, float, float] = (0.3, 0.5, 0.2)

    @field_validator("stage_score_weights")
    @classmethod
    def _positive_weights(cls, value):
        if any(w <= 0 for w in value):
            raise ValueError("stage score weights must be positive")
        return value

    @model_validator(mode="after")
    def _score_range(self):
        if not self.score_min < self.score_max:
            raise ValueError(f"score_min ({self.score_min}) must be below score_max ({self.score_max})")
        return self

    @property
    def foreground_dim(self) -> int:
        return self.feature_dim // 2


class RunConfig(BaseModel):
    """Everything a training run depends on; embedded verbatim in checkpoints."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Variant = Variant.FULL
    epochs: int = Field(20, ge=0)
    batch_size: int = Field(8, ge=1)
    # Learning-rate groups: shared trunk (GAT, TCA, regressor, loss weights), SAP head, TAP head
    lr_trunk: float = Field(1e-3, gt=0)
    lr_sap: float = Field(1e-3, gt=0)
    lr_tap: float = Field(1e-4, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    seed: int = 0
    data: GenConfig = Field(default_factory=GenConfig)
    stage_weights: Tuple[float, float, float] = (3.0, 5.0, 2.0)
    scale_factor: int = 3  # L', recorded only
    attention_dim: int = Field(8, ge=1)
    tca_heads: int = Field(2, ge=1)
    residual_lambda_init: float = 0.5
    focal_alpha: float = Field(0.25, gt=0, le=1)
    focal_gamma: float = Field(2.0, ge=0)
    score_scale: float = Field(10.0, gt=0)
    weak_threshold: float = Field(0.1, ge=0, le=1)
    validate_every: int = Field(1, ge=1)
    eval_batch_size: int = Field(64, ge=1)

    @field_validator("stage_weights")
    @classmethod
    def _positive_stage_weights(cls, value):
        if any(w <= 0 for w in value):
            raise ValueError("stage weights must be positive")
        return value

    @model_validator(mode="after")
    def _heads_divide_dim(self):
        if self.data.feature_dim % self.tca_heads != 0:
            raise ValueError(f"feature_dim {self.data.feature_dim} is not divisible by tca_heads {self.tca_heads}")
        return self

    def learning_rates(self) -> dict:
        return {"trunk": self.lr_trunk, "sap": self.lr_sap, "tap": self.lr_tap}


def load_run_config(path: Union[str, Path], **overrides) -> RunConfig:
    """Reads a JSON config file; keyword overrides (None values ignored) win over file values."""
    document = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    return apply_overrides(RunConfig.model_validate(document), **overrides)


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    data_overrides = overrides.pop("data", None) or {}
    updates = {k: v for k, v in overrides.items() if v is not None}
    document = cfg.model_dump(mode="json")
    document.update(updates)
    if data_overrides:
        document["data"] = {**document["data"], **{k: v for k, v in data_overrides.items() if v is not None}}
    return RunConfig.model_validate(document)

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

from shared import defaults as DEFAULTS

STRUCTURE_LABELS = (
    "S-SP",
    "S-SSO",
    "S-SSI",
    "S-DP",
    "S-DSO",
    "S-DSI",
    "O-SP",
    "O-SSO",
    "O-SSI",
    "O-DP",
    "O-DSO",
    "O-DSI",
    "S-SP-I",
    "S-DP-I",
    "S-SP+O-DSO",
    "S-DP+O-DSO",
    "flexible",
    "baseline",
)
STRUCTURE_ALIASES = {"O-SSP": "O-SSO"}
DYNAMIC_LABELS = ("S-DP", "S-DSO", "S-DSI", "O-DP", "O-DSO", "O-DSI", "S-DP-I", "S-DP+O-DSO")

Variant = Literal["a", "b", "c"]
BaselineParamSet = Literal["ideal", "approx"]
DzwModeName = Literal["Zero", "AbOnly", "BaOnly", "Unrestricted"]


class MultisineConfig(BaseModel):
    period: int = Field(
        default=DEFAULTS.MULTISINE_PERIOD,
        ge=2,
        description="Samples per period of the multisine.",
    )
    bin_step: int = Field(
        default=DEFAULTS.MULTISINE_BIN_STEP,
        ge=1,
        description="Every bin_step-th DFT bin below Nyquist is excited.",
    )
    rms: float = Field(default=DEFAULTS.MULTISINE_RMS, gt=0, description="Target RMS in N.")


class GenerateConfig(BaseModel):
    variant: Variant = "a"
    seed: int = 1
    sampling_time: float = Field(default=DEFAULTS.SAMPLING_TIME_SEC, gt=0)
    multisine: MultisineConfig = Field(default_factory=MultisineConfig)
    est_periods: int = Field(default=DEFAULTS.EST_PERIODS, ge=1)
    val_periods: int = Field(default=DEFAULTS.VAL_PERIODS, ge=1)
    test_periods: int = Field(default=DEFAULTS.TEST_PERIODS, ge=1)
    snr_db: float = DEFAULTS.SNR_DB
    lpf_cutoff_hz: float = Field(
        default=DEFAULTS.LPF_CUTOFF_HZ,
        gt=0,
        description="Cutoff of the first-order output filter of variant c.",
    )
    masses: tuple[float, float, float] = DEFAULTS.MSD_MASSES
    springs: tuple[float, float, float] = DEFAULTS.MSD_SPRINGS
    dampers: tuple[float, float, float] = DEFAULTS.MSD_DAMPERS
    hardening: float = Field(default=DEFAULTS.MSD_HARDENING, ge=0)

    @model_validator(mode="after")
    def validate_physics(self) -> "GenerateConfig":
        for name in ("masses", "springs", "dampers"):
            assert all(v > 0 for v in getattr(self, name)), f"{name} must be positive"
        assert self.lpf_cutoff_hz < 0.5 / self.sampling_time, (
            "lpf_cutoff_hz must lie below the Nyquist frequency"
        )
        return self


class HiddenSpec(BaseModel):
    layers: int = Field(default=DEFAULTS.AUG_HIDDEN_LAYERS, ge=0)
    nodes: int = Field(default=DEFAULTS.AUG_HIDDEN_NODES, ge=1)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.nodes,) * self.layers


class StructureConfig(BaseModel):
    label: str = "S-SP"
    n_x_a: int = Field(default=0, ge=0, description="Augmented states of dynamic structures.")
    hidden: HiddenSpec = Field(default_factory=HiddenSpec)
    encoder_hidden: HiddenSpec = Field(
        default_factory=lambda: HiddenSpec(
            layers=DEFAULTS.ENCODER_HIDDEN_LAYERS, nodes=DEFAULTS.ENCODER_HIDDEN_NODES
        )
    )
    # only for the flexible LFR
    mode: DzwModeName = "Zero"
    n_z_a: Optional[int] = Field(default=None, ge=0)
    n_w_a: Optional[int] = Field(default=None, ge=0)
    # only for the "+O-DSO" compositions; zero hidden layers give an LTI head
    output_head_states: int = Field(default=DEFAULTS.OUTPUT_HEAD_STATES, ge=0)
    output_head_hidden: HiddenSpec = Field(default_factory=lambda: HiddenSpec(layers=0))

    @model_validator(mode="after")
    def validate_label(self) -> "StructureConfig":
        self.label = STRUCTURE_ALIASES.get(self.label, self.label)
        assert self.label in STRUCTURE_LABELS, f"unknown structure label {self.label!r}"
        if self.label == "flexible":
            assert self.n_z_a is not None and self.n_w_a is not None, (
                "flexible structures need n_z_a and n_w_a"
            )
            assert self.mode != "Unrestricted", (
                "Unrestricted D_zw cannot be evaluated by substitution"
            )
        if self.label not in DYNAMIC_LABELS and self.label != "flexible":
            assert self.n_x_a == 0, f"static structure {self.label} cannot have n_x_a > 0"
        return self


class TrainingConfig(BaseModel):
    T: int = Field(default=DEFAULTS.TRUNCATION_LENGTH, ge=2, description="Truncation length.")
    batch_size: int = Field(default=DEFAULTS.BATCH_SIZE, ge=1)
    epochs: int = Field(default=DEFAULTS.EPOCHS, ge=0)
    learning_rate: float = Field(default=DEFAULTS.LEARNING_RATE, gt=0)
    beta1: float = Field(default=DEFAULTS.ADAM_BETA1, ge=0, lt=1)
    beta2: float = Field(default=DEFAULTS.ADAM_BETA2, ge=0, lt=1)
    eps: float = Field(default=DEFAULTS.ADAM_EPS, gt=0)
    lam: float = Field(
        default=DEFAULTS.REGULARIZATION_LAMBDA,
        ge=0,
        description="Weight of the baseline parameter regularization.",
    )
    n_a: int = Field(default=DEFAULTS.ENCODER_LAG, ge=0)
    n_b: int = Field(default=DEFAULTS.ENCODER_LAG, ge=0)
    seed: int = 0
    val_every: int = Field(default=DEFAULTS.VALIDATION_EVERY_EPOCHS, ge=1)
    divergence_patience: int = Field(default=DEFAULTS.DIVERGENCE_PATIENCE, ge=1)
    encoder_epochs: int = Field(default=DEFAULTS.ENCODER_PRETRAIN_EPOCHS, ge=0)
    encoder_batch_size: int = Field(default=DEFAULTS.ENCODER_PRETRAIN_BATCH_SIZE, ge=1)

    @model_validator(mode="after")
    def validate_lags(self) -> "TrainingConfig":
        assert self.n_a + self.n_b > 0, "encoder lags n_a and n_b cannot both be zero"
        return self


class DataConfig(BaseModel):
    est: str
    val: str
    test: Optional[str] = None
    max_est_samples: Optional[int] = Field(
        default=None,
        ge=2,
        description="Truncate the estimation split, e.g. for desk-scale runs.",
    )


class ExperimentConfig(BaseModel):
    name: str = "experiment"
    baseline: BaselineParamSet = "ideal"
    structure: StructureConfig = Field(default_factory=StructureConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    data: Optional[DataConfig] = None
    generate: Optional[GenerateConfig] = None
    output_dir: Optional[str] = None

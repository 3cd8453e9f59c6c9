import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

SPEED_OF_LIGHT = 3e8  # m/s


def ris_grid(n: int) -> Tuple[int, int]:
    """Rectangular factorization Nx*Ny = n with Ny the largest divisor <= sqrt(n)."""
    if n < 1:
        raise ValueError("RIS size must be >= 1")
    ny = max(d for d in range(1, math.isqrt(n) + 1) if n % d == 0)
    return n // ny, ny


class SystemConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    M: int = Field(4, ge=1)                 # BS antennas
    K: int = Field(4, ge=1)                 # UEs
    Nx: int = Field(8, ge=1)                # RIS grid, N = Nx*Ny
    Ny: int = Field(5, ge=1)
    Mx: Optional[int] = Field(None, ge=1)   # BS UPA grid, defaults to (M, 1)
    My: int = Field(1, ge=1)
    L_G: int = Field(3, ge=1)
    L_k: int = Field(3, ge=1)
    f_c: float = Field(28e9, gt=0)          # Hz
    v_max: float = Field(3.0, ge=0)         # m/s
    T_S: int = Field(1, ge=1)               # slots per small-timescale step
    tau: int = Field(100, ge=1)             # T_L / T_S
    S: int = Field(4, ge=1)                 # prediction window (steps)
    snr_db: float = 10.0
    pilot_power: float = Field(1.0, gt=0)
    slot_duration_s: float = Field(1e-4, gt=0)
    stage2: Literal["auto", "reduced", "direct"] = "auto"
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _bs_grid(self):
        mx = self.Mx if self.Mx is not None else self.M // self.My
        if mx * self.My != self.M:
            raise ValueError(f"BS grid Mx*My={mx}*{self.My} does not factor M={self.M}")
        return self

    @classmethod
    def for_ris_size(cls, n: int, **overrides: Any) -> "SystemConfig":
        nx, ny = ris_grid(n)
        return cls(Nx=nx, Ny=ny, **overrides)

    @property
    def N(self) -> int:
        return self.Nx * self.Ny

    @property
    def bs_grid(self) -> Tuple[int, int]:
        mx = self.Mx if self.Mx is not None else self.M // self.My
        return mx, self.My

    @property
    def T_L(self) -> int:
        return self.tau * self.T_S

    @property
    def f_max(self) -> float:
        return self.f_c * self.v_max / SPEED_OF_LIGHT

    @property
    def step_duration_s(self) -> float:
        return self.T_S * self.slot_duration_s

    @property
    def noise_variance(self) -> float:
        return self.pilot_power / 10.0 ** (self.snr_db / 10.0)

    def with_snr(self, snr_db: float) -> "SystemConfig":
        return self.model_copy(update={"snr_db": float(snr_db)})


class TrainingHyper(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lr: float = Field(1e-3, gt=0)
    decay: float = Field(1e-5, ge=0)
    batch_size: int = Field(128, ge=1)
    max_epochs: int = Field(30, ge=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    dtype: Literal["float64", "float32"] = "float64"
    train_samples: int = Field(2000, ge=1)
    val_samples: int = Field(200, ge=1)
    test_samples: int = Field(200, ge=1)
    inputs: Literal["estimated", "genie", "mixed"] = "estimated"
    mixed_snr_db: List[float] = Field(default_factory=lambda: [0.0, 10.0, 20.0, 30.0])


class SweepConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    snr_db: List[float] = Field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0])
    ris_sizes: List[int] = Field(default_factory=lambda: [20, 40, 60, 80, 100])
    windows: List[int] = Field(default_factory=lambda: [2, 4, 6, 8, 10])
    g1_errors: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5])
    ts_values: List[int] = Field(default_factory=lambda: [250, 500, 1000, 1500, 2000, 2500, 3000, 4000, 5000])
    trials: int = Field(100, ge=1)
    T_C: int = Field(200, ge=2)
    T_L: int = Field(100, ge=2)
    g1_source: Literal["genie", "stage1", "perturbed"] = "stage1"
    g1_nmse: float = Field(1e-3, ge=0)
    stage2_source: Literal["estimate", "genie"] = "estimate"
    refine: bool = False
    data_symbols: int = Field(8, ge=1)
    reflection: Literal["ones", "random"] = "ones"
    parafac_P: Optional[int] = Field(None, ge=1)
    i_max: int = Field(100, ge=1)
    sclstm_nmse_db: float = -15.0
    rate_T_L: int = Field(5000, ge=1)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    system: SystemConfig = Field(default_factory=SystemConfig)
    hyper: TrainingHyper = Field(default_factory=TrainingHyper)
    sweep: SweepConfig = Field(default_factory=SweepConfig)


PRESETS: Dict[str, Dict[str, Any]] = {
    # 28 GHz, 4x4 users, 8x5 RIS; full-size training
    "table3": {
        "system": {"M": 4, "K": 4, "Nx": 8, "Ny": 5, "L_G": 3, "L_k": 3,
                   "f_c": 28e9, "v_max": 3.0, "S": 4},
        "hyper": {"train_samples": 10000, "val_samples": 1000, "test_samples": 1000,
                  "max_epochs": 1000},
    },
    # same channel, training sized for a workstation
    "table3-desk": {
        "system": {"M": 4, "K": 4, "Nx": 8, "Ny": 5, "L_G": 3, "L_k": 3,
                   "f_c": 28e9, "v_max": 3.0, "S": 4},
        "hyper": {"train_samples": 2000, "val_samples": 200, "test_samples": 200,
                  "max_epochs": 30},
    },
    "desk": {
        "system": {"M": 2, "K": 2, "Nx": 4, "Ny": 2, "L_G": 3, "L_k": 3, "S": 4},
        "hyper": {"train_samples": 2000, "val_samples": 200, "test_samples": 200},
        "sweep": {"snr_db": [0.0, 10.0, 20.0, 30.0], "ris_sizes": [8, 16, 32],
                  "windows": [2, 4, 6, 8]},
    },
}


class EstimationRow(BaseModel):
    snr_db: float
    quantity: str
    nmse: float
    nmse_db: float
    pilot_slots: int
    trials: int


class OverheadReport(BaseModel):
    P_L: int
    tau: float
    T_S: float
    T_L: float
    P_a: float
    lambda_d: float
    baseline_P_a: Dict[str, float]
    tau_prop1_loose: float
    tau_prop1_exact: float
    tau_prop2: float
    parafac_P: int
    stage2_mode: str = "reduced"    # estimator run_stages uses for this config
    P_L_trace: int = 0              # slots it spends per block, equal to P_L in reduced mode


class RunManifest(BaseModel):
    subcommand: str
    config: Dict[str, Any]
    config_hash: str
    seeds: List[int]
    checkpoint_hash: Optional[str] = None
    version: str
    outputs: List[str] = Field(default_factory=list)

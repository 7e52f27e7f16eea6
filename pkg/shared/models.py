# Shared data models for the cfmm cell-free mmWave downlink simulator
import math
from enum import Enum
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import (  # Data validation and serialization
    BaseModel,
    ConfigDict,
    Field,
    field_serializer,
    field_validator,
    model_validator,
)


def _complex_payload(arr: np.ndarray) -> Dict[str, Any]:
    """Split a complex array into JSON-friendly real/imag nested lists."""
    arr = np.asarray(arr)
    return {"real": arr.real.tolist(), "imag": arr.imag.tolist()}


# ---------------------------------------------------------------------------
# Enumerations
# ---------------------------------------------------------------------------


class KappaMode(str, Enum):
    """How the smallest eigenvalue of Z is estimated for the Neumann scaling factor."""

    RETAINED = "retained"  # κ_min = smallest retained eigenvalue + λ
    TIGHT = "tight"  # κ_min = λ whenever the gram is rank deficient


class ExactSolver(str, Enum):
    """Algorithm used when the regularised system is solved exactly."""

    LOWRANK = "lowrank"  # eigenbasis closed form
    DENSE = "dense"  # LU factorisation of (H + λI)


class InterferenceScope(str, Enum):
    """Which transmissions count as interference inside the WSMSE surrogate."""

    NETWORK = "network"  # every AP's transmission to every UE it serves
    CLUSTER = "cluster"  # only the serving cluster of the victim UE


class SolverMode(str, Enum):
    """Inverse used by the per-AP precoder update."""

    EXACT = "exact"
    NSE = "nse"


class UserClass(str, Enum):
    """Beam-collision classification of a UE at one AP."""

    NIU = "niu"  # strongest beam not shared with any co-served UE
    IU = "iu"  # strongest beam contested


class RateMode(str, Enum):
    """How per-link contributions are combined when evaluating SINR."""

    PER_LINK = "per_link"
    COHERENT = "coherent"


class Scheme(str, Enum):
    """Beam-selection / precoder combinations compared by the harness."""

    PROPOSED = "proposed"  # two-stage beam selection + WSMSE precoder
    IABS_ONLY = "iabs_only"  # intra-cluster stage only + WSMSE precoder
    PROPOSED_BS_ZF = "proposed_bs_zf"  # two-stage beam selection + zero forcing


class ExperimentKind(str, Enum):
    """Experiment sweeps provided by the harness."""

    CONVERGENCE = "convergence"
    POWER_SWEEP = "power_sweep"
    ANTENNA_SWEEP = "antenna_sweep"
    CUSTOM = "custom"


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------


class SystemConfig(BaseModel):
    """
    Every scenario parameter of one simulated network.

    Field names are snake_case; the conventional symbols (``L``, ``K``, ``N``,
    ``N_RF``, ``P_max``, ``M``, ``P``, ``t``) are accepted as aliases so config
    files can use either spelling. Unknown keys are rejected.

    Attributes:
        num_aps: Number of access points L
        num_ues: Number of single-antenna users K
        num_antennas: ULA size N per AP, also the number of DFT beams
        num_rf_chains: RF chains N_RF per AP, one selected beam each
        p_max_w: Per-AP transmit power budget in watts
        noise_dbm: Downlink noise power in dBm
        cluster_size: Serving APs M per UE
        gamma_th: Out-of-cluster / intra-cluster energy threshold
        nse_order: Neumann series order t, or "exact"
        nse_warm_start: Start each series from the AP's previous precoders
        interference_scope: Interference set used by the WSMSE surrogate
        ue_weights: Optional per-UE rate weights (defaults to all ones)
    """

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    # Network dimensions
    num_aps: int = Field(32, alias="L", ge=1)
    num_ues: int = Field(8, alias="K", ge=1)
    num_antennas: int = Field(16, alias="N", ge=1)
    num_rf_chains: int = Field(8, alias="N_RF", ge=1)
    p_max_w: float = Field(1.0, alias="P_max", gt=0)
    noise_dbm: float = -85.0
    area_m: float = Field(250.0, ge=0)
    cluster_size: int = Field(4, alias="M", ge=1)
    gamma_th: float = Field(0.5, gt=0)

    # Propagation
    carrier_hz: float = Field(28e9, gt=0)
    pl_exponent: float = Field(3.19, alias="n")
    pl_b: float = Field(0.0, alias="b")
    pl_f0_hz: float = Field(2e9, alias="f0", gt=0)
    shadow_var_db2: float = Field(4.2, ge=0)
    nlos_paths: int = Field(3, alias="P", ge=0)
    nlos_power_offset_db: float = -10.0
    min_distance_m: float = Field(1.0, gt=0)

    # Precoder
    nse_order: Union[int, str] = Field("exact", alias="t")
    max_iters: int = Field(50, ge=1)
    conv_tol: float = Field(1e-4, gt=0)
    bisection_tol: float = Field(1e-8, gt=0)
    rank_tol: float = Field(1e-10, gt=0, lt=1)
    kappa_mode: KappaMode = KappaMode.RETAINED
    nse_warm_start: bool = True
    exact_solver: ExactSolver = ExactSolver.LOWRANK
    interference_scope: InterferenceScope = InterferenceScope.NETWORK
    ue_weights: Optional[List[float]] = None

    # Beam selection
    refine_budget: Optional[int] = Field(None, ge=0)

    rng_seed: int = Field(0, ge=0, lt=2**64)

    @field_validator("nse_order")
    @classmethod
    def _check_nse_order(cls, value: Union[int, str]) -> Union[int, str]:
        if isinstance(value, str):
            if value.strip().lower() in ("exact", "inf"):
                return "exact"
            try:
                value = int(value)
            except ValueError:
                raise ValueError(f"nse_order must be 'exact' or a non-negative integer, got {value!r}")
        if value < 0:
            raise ValueError("nse_order must be non-negative")
        return value

    @field_validator("ue_weights")
    @classmethod
    def _check_weights(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(not (w > 0 and math.isfinite(w)) for w in value):
            raise ValueError("ue_weights must be finite and positive")
        return value

    @model_validator(mode="after")
    def _check_dimensions(self) -> "SystemConfig":
        if self.num_rf_chains > self.num_antennas:
            raise ValueError(
                f"N_RF ({self.num_rf_chains}) cannot exceed N ({self.num_antennas})"
            )
        if self.cluster_size > self.num_aps:
            raise ValueError(f"M ({self.cluster_size}) cannot exceed L ({self.num_aps})")
        if self.num_ues * self.cluster_size > self.num_aps * self.num_rf_chains:
            raise ValueError(
                f"K*M = {self.num_ues * self.cluster_size} serving links exceed the "
                f"L*N_RF = {self.num_aps * self.num_rf_chains} available RF chains"
            )
        if self.ue_weights is not None and len(self.ue_weights) != self.num_ues:
            raise ValueError(f"ue_weights needs {self.num_ues} entries, got {len(self.ue_weights)}")
        return self

    @cached_property
    def noise_w(self) -> float:
        """Linear noise power δ² in watts."""
        return 10.0 ** ((self.noise_dbm - 30.0) / 10.0)

    @property
    def solver_mode(self) -> SolverMode:
        return SolverMode.EXACT if self.nse_order == "exact" else SolverMode.NSE

    @property
    def weights(self) -> np.ndarray:
        """Per-UE rate weights w_k."""
        if self.ue_weights is None:
            return np.ones(self.num_ues)
        return np.asarray(self.ue_weights, dtype=float)

    @property
    def refinement_budget(self) -> int:
        return self.num_antennas if self.refine_budget is None else self.refine_budget


# ---------------------------------------------------------------------------
# Numerics
# ---------------------------------------------------------------------------


class FlopCounter(BaseModel):
    """
    Running tally of complex multiplies and adds.

    Counts only ever grow during a run; ``reset`` zeroes them. One counter
    belongs to one thread of execution.
    """

    complex_multiplies: int = Field(0, ge=0)
    complex_adds: int = Field(0, ge=0)

    def add(self, multiplies: int = 0, adds: int = 0) -> None:
        if multiplies < 0 or adds < 0:
            raise ValueError("flop increments must be non-negative")
        self.complex_multiplies += int(multiplies)
        self.complex_adds += int(adds)

    def merge(self, other: "FlopCounter") -> None:
        self.add(other.complex_multiplies, other.complex_adds)

    def reset(self) -> None:
        self.complex_multiplies = 0
        self.complex_adds = 0

    @property
    def total(self) -> int:
        return self.complex_multiplies + self.complex_adds


class HermitianEig(BaseModel):
    """Eigen-pairs of a Hermitian matrix, eigenvalues in descending order."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eigenvalues: np.ndarray  # real, length m, descending
    eigenvectors: np.ndarray  # complex m×m, column i pairs with eigenvalues[i]
    sweeps: int = 0

    @model_validator(mode="after")
    def _check_shapes(self) -> "HermitianEig":
        m = self.eigenvalues.shape[0]
        if self.eigenvectors.shape != (m, m):
            raise ValueError(f"eigenvectors must be {m}x{m}, got {self.eigenvectors.shape}")
        if not np.all(np.isfinite(self.eigenvalues)):
            raise ValueError("eigenvalues must be finite")
        return self

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


class LowRankOperator(BaseModel):
    """
    The regularised operator Z = J Σ J^H + λI.

    Attributes:
        basis: m×r matrix J of retained eigenvectors
        eigenvalues: r positive retained eigenvalues (diagonal of Σ)
        shift: Regulariser λ ≥ 0
        dim: Ambient dimension m
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    basis: np.ndarray
    eigenvalues: np.ndarray
    shift: float = Field(ge=0)
    dim: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_rank(self) -> "LowRankOperator":
        r = self.eigenvalues.shape[0]
        if r > self.dim:
            raise ValueError(f"rank {r} exceeds dimension {self.dim}")
        if self.basis.shape != (self.dim, r):
            raise ValueError(f"basis must be {self.dim}x{r}, got {self.basis.shape}")
        if r and not np.all(self.eigenvalues > 0):
            raise ValueError("retained eigenvalues must be positive")
        return self

    @property
    def rank(self) -> int:
        return int(self.eigenvalues.shape[0])

    def apply(self, x: np.ndarray, fc: Optional[FlopCounter] = None) -> np.ndarray:
        """Return Z·x without forming Z; ``x`` may be a vector or an m×n block of columns."""
        m, r = self.dim, self.rank
        x = np.asarray(x)
        cols = x.reshape(m, -1)
        coeffs = self.basis.conj().T @ cols
        out = self.basis @ (self.eigenvalues[:, None] * coeffs) + self.shift * cols
        if fc is not None:
            n = cols.shape[1]
            fc.add(multiplies=n * (2 * r * m + r + m), adds=n * (2 * r * m - r) if r else 0)
        return out.reshape(x.shape)

    def to_dense(self) -> np.ndarray:
        return (self.basis * self.eigenvalues) @ self.basis.conj().T + self.shift * np.eye(
            self.dim
        )


# ---------------------------------------------------------------------------
# Topology and channels
# ---------------------------------------------------------------------------


class Topology(BaseModel):
    """
    One network drop: AP/UE positions and the user-centric serving clusters.

    ``serving_aps[k]`` is the sorted cluster M_k of UE k and ``served_ues[l]``
    the sorted set K_l of AP l. Both are empty until clusters are formed.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    ap_xy: np.ndarray  # L×2 metres
    ue_xy: np.ndarray  # K×2 metres
    serving_aps: List[List[int]] = []
    served_ues: List[List[int]] = []
    large_scale_db: Optional[np.ndarray] = None  # L×K path loss (dB) used for clustering

    @field_serializer("ap_xy", "ue_xy")
    def _serialize_positions(self, value: np.ndarray) -> List[List[float]]:
        return value.tolist()

    @field_serializer("large_scale_db")
    def _serialize_gains(self, value: Optional[np.ndarray]) -> Optional[List[List[float]]]:
        return None if value is None else value.tolist()

    @property
    def num_aps(self) -> int:
        return int(self.ap_xy.shape[0])

    @property
    def num_ues(self) -> int:
        return int(self.ue_xy.shape[0])

    @property
    def clustered(self) -> bool:
        return bool(self.serving_aps)

    def is_served(self, ue: int, ap: int) -> bool:
        return ap in self.serving_aps[ue]

    def mask(self) -> np.ndarray:
        """L×K boolean serving mask, entry [l, k] true iff l ∈ M_k."""
        out = np.zeros((self.num_aps, self.num_ues), dtype=bool)
        for k, aps in enumerate(self.serving_aps):
            out[aps, k] = True
        return out


class PathParams(BaseModel):
    """One propagation path of an (AP, UE) link: complex gain and spatial direction."""

    model_config = ConfigDict(frozen=True)

    gain_real: float
    gain_imag: float
    spatial_dir: float = Field(ge=-0.5, le=0.5)

    @property
    def gain(self) -> complex:
        return complex(self.gain_real, self.gain_imag)


class ChannelSet(BaseModel):
    """
    Channels of every (AP, UE) pair of one drop.

    Arrays are indexed ``[l, k, ...]``. Path 0 of every link is the LoS path.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    antenna_domain: np.ndarray  # L×K×N complex, h_kl
    beamspace: np.ndarray  # L×K×N complex, U^H h_kl
    path_gains: np.ndarray  # L×K×(P+1) complex
    path_dirs: np.ndarray  # L×K×(P+1) real in [-0.5, 0.5]

    @model_validator(mode="after")
    def _check_shapes(self) -> "ChannelSet":
        if self.antenna_domain.shape != self.beamspace.shape:
            raise ValueError("antenna-domain and beamspace arrays must share a shape")
        if self.path_gains.shape != self.path_dirs.shape:
            raise ValueError("path gain and direction arrays must share a shape")
        return self

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.antenna_domain.shape)  # type: ignore[return-value]

    def paths(self, ap: int, ue: int) -> List[PathParams]:
        return [
            PathParams(gain_real=g.real, gain_imag=g.imag, spatial_dir=float(d))
            for g, d in zip(self.path_gains[ap, ue], self.path_dirs[ap, ue])
        ]

    def to_json(self) -> Dict[str, Any]:
        return {
            "shape": list(self.shape),
            "antenna_domain": _complex_payload(self.antenna_domain),
            "beamspace": _complex_payload(self.beamspace),
            "path_gains": _complex_payload(self.path_gains),
            "path_dirs": self.path_dirs.tolist(),
        }


# ---------------------------------------------------------------------------
# Beam selection
# ---------------------------------------------------------------------------


class RfChainRow(BaseModel):
    """One RF chain of an AP: its beam and the UE it carries (None for padding)."""

    beam: int = Field(ge=0)
    ue: Optional[int] = None


class ApBeamMap(BaseModel):
    """Beam map of one AP; row r of ``rows`` realises row r of the selection matrix."""

    ap: int
    rows: List[RfChainRow]
    tags: Dict[int, UserClass] = {}

    def beams(self) -> List[int]:
        return [row.beam for row in self.rows]

    def beam_of(self, ue: int) -> int:
        for row in self.rows:
            if row.ue == ue:
                return row.beam
        raise KeyError(f"UE {ue} has no beam at AP {self.ap}")

    def row_of(self, ue: int) -> int:
        for r, row in enumerate(self.rows):
            if row.ue == ue:
                return r
        raise KeyError(f"UE {ue} has no beam at AP {self.ap}")

    def assigned(self) -> List[Tuple[int, int]]:
        """(ue, beam) pairs carrying a UE, in row order."""
        return [(row.ue, row.beam) for row in self.rows if row.ue is not None]


class RatioReport(BaseModel):
    """Out-of-cluster / intra-cluster energy ratio of one assigned beam."""

    ue: int
    ap: int
    beam: int
    ice: float = Field(ge=0)
    oce: float = Field(ge=0)
    ratio: float = Field(ge=0)
    offender: int


class Reassignment(BaseModel):
    ap: int
    ue: int
    old_beam: int
    new_beam: int


class RefinementStep(BaseModel):
    iteration: int
    reports: List[RatioReport]
    reassignments: List[Reassignment] = []


class BeamAssignment(BaseModel):
    """
    Selected beams of every AP, plus the refinement trace that produced them.

    Attributes:
        aps: One beam map per AP, index l
        trace: Refinement iterations (empty for intra-cluster-only selection)
        exhausted: (ap, ue) pairs whose untried beams ran out during refinement
    """

    aps: List[ApBeamMap]
    trace: List[RefinementStep] = []
    exhausted: List[Tuple[int, int]] = []

    def beams(self, ap: int) -> List[int]:
        return self.aps[ap].beams()

    def beam_of(self, ap: int, ue: int) -> int:
        return self.aps[ap].beam_of(ue)

    def selection_matrix(self, ap: int, num_beams: int) -> np.ndarray:
        """N_RF×N 0-1 matrix F_l whose row r picks the beam of RF chain r."""
        rows = self.aps[ap].rows
        f = np.zeros((len(rows), num_beams))
        for r, row in enumerate(rows):
            f[r, row.beam] = 1.0
        return f

    def check_invariants(self, topo: Topology) -> None:
        """Raise ValueError unless every AP uses distinct beams and serves each UE exactly once."""
        for beam_map in self.aps:
            beams = beam_map.beams()
            if len(set(beams)) != len(beams):
                raise ValueError(f"AP {beam_map.ap} reuses a beam: {beams}")
            carried = sorted(row.ue for row in beam_map.rows if row.ue is not None)
            if carried != sorted(topo.served_ues[beam_map.ap]):
                raise ValueError(
                    f"AP {beam_map.ap} carries UEs {carried}, expected {topo.served_ues[beam_map.ap]}"
                )


# ---------------------------------------------------------------------------
# Precoding
# ---------------------------------------------------------------------------


class EffectiveChannels(BaseModel):
    """
    Beam-selected channels h̄_kl for every (AP, UE) pair.

    ``channels[l, k, r]`` is the beamspace channel of UE k at the beam carried by
    RF chain r of AP l. ``serving[l, k]`` is the serving mask (l ∈ M_k).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    channels: np.ndarray  # L×K×N_RF complex
    serving: np.ndarray  # L×K bool

    @property
    def num_aps(self) -> int:
        return int(self.channels.shape[0])

    @property
    def num_ues(self) -> int:
        return int(self.channels.shape[1])

    @property
    def num_rf_chains(self) -> int:
        return int(self.channels.shape[2])

    def served(self, ap: int) -> np.ndarray:
        return np.flatnonzero(self.serving[ap])


class WsmseIteration(BaseModel):
    """Trace record of one WSMSE iteration."""

    iteration: int
    objective: float
    sum_rate: float
    lambdas: List[float]
    powers: List[float]


class PrecoderState(BaseModel):
    """
    Precoders and auxiliary WSMSE variables.

    ``z[l, k]`` is the precoder of UE k at AP l and is identically zero when
    l ∉ M_k. ``mu`` holds the per-UE receive scalar (sum of the per-link
    coefficients in ``mu_link``).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    z: np.ndarray  # L×K×N_RF complex
    mu: np.ndarray  # K complex
    mu_link: np.ndarray  # L×K complex, zero off-cluster
    alpha: np.ndarray  # K real > 0
    lam: np.ndarray  # L real ≥ 0
    objective_history: List[float] = []
    sum_rate_history: List[float] = []
    trace: List[WsmseIteration] = []
    iterations: int = 0
    converged: bool = False

    def powers(self) -> np.ndarray:
        """Per-AP transmit power Σ_k ‖z_kl‖²."""
        return np.sum(np.abs(self.z) ** 2, axis=(1, 2))


class PrecodingRequest(BaseModel):
    """
    CPU → AP message for one z update.

    Carries only global per-UE scalars; the AP combines them with its own
    effective channels.

    Attributes:
        ap: Target AP index
        gram_weights: K real coefficients w_k α_k Σ_l |μ_kl|² (zero for UEs outside the gram)
        rhs_coeffs: K complex coefficients w_k α_k μ_kl for this AP (zero off-cluster)
        p_max_w: Power budget
        nse_order: None for an exact solve
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    ap: int
    gram_weights: np.ndarray
    rhs_coeffs: np.ndarray
    p_max_w: float = Field(gt=0)
    nse_order: Optional[int] = Field(None, ge=0)


class PrecodingResult(BaseModel):
    """AP → CPU reply: new precoders of the served UEs and solver diagnostics."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    ap: int
    z: np.ndarray  # K×N_RF, rows of unserved UEs zero
    lam: float
    power: float
    rank: int
    rescaled: bool = False
    solve_flops: FlopCounter = Field(default_factory=FlopCounter)
    eig_flops: FlopCounter = Field(default_factory=FlopCounter)
    elapsed_ms: float = 0.0


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


class RateReport(BaseModel):
    """Per-UE SINR and achievable rate (bit/s/Hz) of one precoder state."""

    sinr: List[float]
    rate_bps_hz: List[float]
    sum_rate: float
    weighted_sum_rate: float
    mode: RateMode = RateMode.PER_LINK


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------


class ExperimentSpec(BaseModel):
    """
    One Monte-Carlo experiment.

    ``sweep_field`` names the SystemConfig field varied across ``sweep_values``.
    The convergence kind sweeps the Neumann order instead and records one row per
    WSMSE iteration.
    """

    kind: ExperimentKind
    base: SystemConfig = Field(default_factory=SystemConfig)
    sweep_field: Optional[str] = None
    sweep_values: List[float] = []
    schemes: List[Scheme] = [Scheme.PROPOSED]
    nse_orders: List[int] = []
    drops: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_sweep(self) -> "ExperimentSpec":
        if not self.schemes:
            raise ValueError("at least one scheme is required")
        if any(b <= a for a, b in zip(self.sweep_values, self.sweep_values[1:])):
            raise ValueError(f"sweep values must be strictly increasing: {self.sweep_values}")
        if self.sweep_values and self.sweep_field is None:
            raise ValueError("sweep_values given without sweep_field")
        if self.sweep_field is not None and self.sweep_field not in SystemConfig.model_fields:
            raise ValueError(f"unknown sweep field {self.sweep_field!r}")
        if any(t < 0 for t in self.nse_orders):
            raise ValueError("nse_orders must be non-negative")
        return self


class ResultRow(BaseModel):
    """One output row: a scheme at a sweep point on one drop (and iteration)."""

    scheme: str
    sweep: Optional[float] = None
    drop: int
    iter: Optional[int] = None
    sum_rate: float = Field(ge=0)
    per_ue_rates: List[float] = []
    flops: int = 0
    wall_ms: float = 0.0


class SimResult(BaseModel):
    rows: List[ResultRow] = []
    metadata: Dict[str, Any] = {}


class DropOutcome(BaseModel):
    """Everything one scheme produced on one drop."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    scheme: Scheme
    nse_order: Optional[int] = None
    report: RateReport
    assignment: BeamAssignment
    state: Optional[PrecoderState] = None  # None for zero forcing
    flops: int = 0
    wall_ms: float = 0.0

    @property
    def trace(self) -> List[WsmseIteration]:
        return [] if self.state is None else self.state.trace

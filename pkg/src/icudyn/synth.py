"""Synthetic ICU cohort with a known mortality mechanism.

Each encounter's latent physiology ``z`` follows a stable linear SDE whose
speed is set by a per-encounter severity ``s``::

    dz = s A z dt + sqrt(s) L dW

Scaling drift by ``s`` and diffusion by ``sqrt(s)`` leaves the stationary
distribution of ``z`` unchanged while every time derivative grows with ``s``:
a single snapshot says nothing about severity, the trajectory does. The
death hazard (per hour) is

    lambda(t) = base_hazard * (sum_k w_k z_k^2 + w_deriv * |s A z|^2)

so mortality concentrates in fast-moving (volatile) encounters. Vitals are
charted more often when the state is changing, and rescue drugs follow rapid
change, as in real ICU charting.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import linalg, optimize
from scipy.special import expit

from .catalog import VariableCatalog, VariableKind, load_demo_catalog
from .errors import DataValidationError, SingleClassError, UnstableDynamicsError
from .evaluation import roc_auc
from .events import EVENT_COLUMNS, write_events_csv, write_labels_csv

TRUTH_HEADER = ["encounter_id", "t_minutes", "true_risk"]

# canonical-unit center and spread of each demo variable
DEMO_LEVELS = {
    "heart_rate": (120.0, 18.0),
    "systolic_bp": (100.0, 12.0),
    "diastolic_bp": (60.0, 9.0),
    "resp_rate": (28.0, 6.0),
    "spo2": (96.0, 2.0),
    "temperature": (37.0, 0.6),
    "lactate": (1.8, 0.7),
    "ph": (7.38, 0.05),
    "glucose": (6.5, 1.5),
    "potassium": (4.0, 0.5),
    "creatinine": (0.6, 0.2),
    "wbc": (11.0, 3.5),
}


def oscillator_drift(periods_hours: Sequence[float], damping: float) -> np.ndarray:
    """Block-diagonal drift of damped oscillators; state is (position, velocity) pairs."""
    blocks = []
    for period in periods_hours:
        w = 2 * math.pi / period
        blocks.append(np.array([[0.0, 1.0], [-w * w, -2 * damping * w]]))
    return linalg.block_diag(*blocks)


@dataclass
class SynthConfig:
    n_patients: int = 1700
    encounter_count_probs: tuple[float, ...] = (0.7, 0.2, 0.1)  # P(1), P(2), P(3) encounters
    oscillator_periods_hours: tuple[float, ...] = (6.0, 10.0)
    oscillator_damping: float = 0.3
    drift: list | None = None  # explicit d x d matrix overrides the oscillators
    diffusion_std: float = 1.0  # applied to velocity coordinates (all coordinates for explicit drift)
    severity_log_mean: float = 0.0
    severity_log_std_patient: float = 0.8
    severity_log_std_encounter: float = 0.45
    hazard_state_weight: float = 0.05
    hazard_deriv_weight: float = 1.0
    base_hazard: float | None = None  # per hour; None -> solved from target_mortality
    target_mortality: float = 0.05
    obs_noise_std: float = 0.15
    patient_bias_std: float = 0.3
    vitals_interval_minutes: tuple[float, float] = (15.0, 75.0)
    sampling_gain: float = 1.0
    change_window_minutes: float = 30.0
    vitals_missing_prob: float = 0.1
    lab_interval_minutes: tuple[float, float] = (180.0, 480.0)
    lab_missing_prob: float = 0.3
    drug_logit_base: float = -6.0
    drug_logit_gain: float = 0.7
    intervention_logit_base: float = -5.0
    intervention_logit_gain: float = 1.0
    duration_hours: tuple[float, float] = (16.0, 48.0)
    step_minutes: float = 1.0
    truth_step_minutes: float = 5.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.vitals_interval_minutes
        if not 0 < lo <= hi:
            raise DataValidationError("vitals sampling interval bounds must satisfy 0 < min <= max")
        lo, hi = self.lab_interval_minutes
        if not 0 < lo <= hi:
            raise DataValidationError("lab sampling interval bounds must satisfy 0 < min <= max")
        if not 0 < self.duration_hours[0] <= self.duration_hours[1]:
            raise DataValidationError("encounter duration bounds must satisfy 0 < min <= max")
        if not 0 < self.step_minutes <= 1.0:
            raise DataValidationError("integration step must lie in (0, 1] minutes")
        probs = np.asarray(self.encounter_count_probs, dtype=float)
        if probs.ndim != 1 or len(probs) == 0 or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
            raise DataValidationError("encounter_count_probs must be a probability vector")
        A = self.drift_matrix()
        eig = np.linalg.eigvals(A)
        worst = eig[np.argmax(eig.real)]
        if worst.real > 0:
            raise UnstableDynamicsError(f"drift eigenvalue {worst:.6g} has positive real part")

    # -- derived quantities -------------------------------------------------

    def drift_matrix(self) -> np.ndarray:
        if self.drift is not None:
            A = np.asarray(self.drift, dtype=float)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise DataValidationError("drift must be a square matrix")
            return A
        return oscillator_drift(self.oscillator_periods_hours, self.oscillator_damping)

    @property
    def latent_dim(self) -> int:
        return self.drift_matrix().shape[0]

    def diffusion(self) -> np.ndarray:
        d = self.latent_dim
        L = np.zeros((d, d))
        if self.drift is None:
            L[1::2, 1::2] = np.eye(d // 2) * self.diffusion_std
        else:
            L = np.eye(d) * self.diffusion_std
        return L

    def stationary_cov(self) -> np.ndarray:
        """Solves A S + S A^T + L L^T = 0 (independent of severity)."""
        A, L = self.drift_matrix(), self.diffusion()
        return linalg.solve_continuous_lyapunov(A, -L @ L.T)

    def severity_log_std(self) -> float:
        return math.hypot(self.severity_log_std_patient, self.severity_log_std_encounter)

    # -- (de)serialization ---------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known - {"version"}
        if extra:
            raise DataValidationError(f"unknown synth config keys: {sorted(extra)}")
        d = {k: tuple(v) if isinstance(v, list) and k != "drift" else v for k, v in d.items() if k in known}
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# hazard calibration


def hazard_rates(config: SynthConfig) -> tuple[float, float]:
    """Stationary means of the state term and of |A z|^2 (per unit severity^2)."""
    S = config.stationary_cov()
    A = config.drift_matrix()
    state = config.hazard_state_weight * float(np.trace(S))
    deriv = config.hazard_deriv_weight * float(np.trace(A @ S @ A.T))
    return state, deriv


def expected_mortality(config: SynthConfig, base_hazard: float, n_nodes: int = 40) -> float:
    """P(death) with the integrated hazard replaced by its expectation.

    Gauss-Hermite over log-severity, Gauss-Legendre over the uniform duration.
    """
    state, deriv = hazard_rates(config)
    x, wx = np.polynomial.hermite_e.hermegauss(n_nodes)
    s = np.exp(config.severity_log_mean + config.severity_log_std() * x)
    wx = wx / wx.sum()
    u, wu = np.polynomial.legendre.leggauss(n_nodes)
    lo, hi = config.duration_hours
    dur = lo + (hi - lo) * (u + 1) / 2
    wu = wu / wu.sum()
    cum = base_hazard * dur[None, :] * (state + deriv * s[:, None] ** 2)
    return float(wx @ (1 - np.exp(-cum)) @ wu)


def solve_base_hazard(config: SynthConfig, target: float | None = None) -> float:
    target = config.target_mortality if target is None else target
    if not 0 < target < 1:
        raise DataValidationError("target mortality must lie in (0, 1)")
    state, deriv = hazard_rates(config)
    if state + deriv <= 0:
        raise DataValidationError("hazard weights are all zero; no mortality rate can be targeted")
    return optimize.brentq(lambda h: expected_mortality(config, h) - target, 1e-12, 1e3, xtol=1e-14)


def resolved_base_hazard(config: SynthConfig) -> float:
    if config.base_hazard is not None:
        return float(config.base_hazard)
    state, deriv = hazard_rates(config)
    if state + deriv == 0:
        return 0.0
    return solve_base_hazard(config)


# ---------------------------------------------------------------------------
# generation


@dataclass
class VariableSpec:
    canonical: str
    kind: VariableKind
    aliases: list[tuple[str, float, float]]  # (raw name, scale, offset) from the catalog
    center: float = 0.0
    spread: float = 1.0
    loading: np.ndarray | None = None


@dataclass
class SynthEncounter:
    patient_id: str
    encounter_id: str
    events: pd.DataFrame
    survived: bool
    truth_t: np.ndarray  # minutes
    truth_risk: np.ndarray
    severity: float
    duration_minutes: float

    def risk_at(self, minutes: float) -> float:
        k = int(np.searchsorted(self.truth_t, minutes, side="right")) - 1
        return float(self.truth_risk[max(k, 0)])


def variable_specs(catalog: VariableCatalog, config: SynthConfig) -> list[VariableSpec]:
    """Observation map: random unit loadings on the latent state, scaled so
    the latent part of each physiologic/lab variable has unit variance."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x0B5]))
    S = config.stationary_cov()
    specs = []
    for name in catalog.canonical:
        kind = catalog.kind(name)
        aliases = [(raw, catalog.entries[raw].scale, catalog.entries[raw].offset) for raw in catalog.aliases(name)]
        center, spread = DEMO_LEVELS.get(name, (0.0, 1.0))
        loading = None
        if not kind.binarized and name != "age":
            v = rng.normal(size=config.latent_dim)
            loading = v / math.sqrt(float(v @ S @ v))
        specs.append(VariableSpec(name, kind, aliases, center, spread, loading))
    return specs


def _integrate(rng, config, A, L, severity, n_steps, h_hours):
    """Explicit Euler-Maruyama from the stationary distribution."""
    d = A.shape[0]
    S = config.stationary_cov()
    z = np.empty((n_steps + 1, d))
    z[0] = rng.multivariate_normal(np.zeros(d), S, method="cholesky")
    M = np.eye(d) + h_hours * severity * A
    noise = rng.standard_normal((n_steps, d)) @ (math.sqrt(h_hours * severity) * L).T
    MT = M.T
    for k in range(n_steps):
        z[k + 1] = z[k] @ MT + noise[k]
    if not np.all(np.isfinite(z)) or np.abs(z).max() > 1e6:
        eig = np.linalg.eigvals(M)
        worst = eig[np.argmax(np.abs(eig))]
        raise UnstableDynamicsError(
            f"state overflow at severity {severity:.4g}: Euler propagator eigenvalue {worst:.6g} "
            f"(|.|={abs(worst):.4g})"
        )
    return z


def _encounter(rng, config, specs, A, L, base_hazard, patient_id, encounter_id, log_sev_patient, bias, age):
    severity = math.exp(
        config.severity_log_mean + log_sev_patient + config.severity_log_std_encounter * rng.standard_normal()
    )
    step = config.step_minutes
    duration = rng.uniform(*config.duration_hours) * 60.0
    n_steps = int(math.ceil(duration / step))
    h = step / 60.0
    z = _integrate(rng, config, A, L, severity, n_steps, h)
    t_grid = step * np.arange(n_steps + 1)

    drift = z @ (severity * A).T
    hazard = base_hazard * (
        config.hazard_state_weight * np.sum(z * z, axis=1) + config.hazard_deriv_weight * np.sum(drift**2, axis=1)
    )
    cum = np.r_[0.0, np.cumsum(hazard[:-1] * h)]
    threshold = rng.exponential()
    crossed = np.flatnonzero(cum >= threshold)
    survived = not (len(crossed) and t_grid[crossed[0]] <= duration)
    end = duration if survived else float(t_grid[crossed[0]])
    n_end = int(round(end / step))

    # how much the state moved over the last change window, per grid step
    lag = max(int(round(config.change_window_minutes / step)), 1)
    change = np.linalg.norm(z - z[np.maximum(np.arange(len(z)) - lag, 0)], axis=1)

    lo, hi = config.vitals_interval_minutes
    vitals_t = [0.0]
    while True:
        k = int(round(vitals_t[-1] / step))
        gap = float(np.clip(hi / (1.0 + config.sampling_gain * change[k]), lo, hi))
        nxt = vitals_t[-1] + gap
        if nxt > end:
            break
        vitals_t.append(nxt)
    lab_lo, lab_hi = config.lab_interval_minutes
    lab_t = []
    t = rng.uniform(0, lab_lo)
    while t <= end:
        lab_t.append(t)
        t += rng.uniform(lab_lo, lab_hi)

    rows = []

    def emit(spec, t, value):
        raw, scale, offset = spec.aliases[rng.integers(len(spec.aliases))]
        rows.append((patient_id, encounter_id, raw, t, (value - offset) / scale))

    for spec in specs:
        if spec.canonical == "age":
            emit(spec, 0.0, age)
    for t in vitals_t:
        k = int(round(t / step))
        for j, spec in enumerate(specs):
            if spec.kind is VariableKind.PHYSIOLOGIC and spec.loading is not None:
                if rng.random() < config.vitals_missing_prob:
                    continue
                latent = float(spec.loading @ z[k]) + bias[j] + config.obs_noise_std * rng.standard_normal()
                emit(spec, t, spec.center + spec.spread * latent)
            elif spec.kind is VariableKind.DRUG:
                if rng.random() < expit(config.drug_logit_base + config.drug_logit_gain * change[k]):
                    emit(spec, t, float(rng.uniform(0.5, 5.0)))
            elif spec.kind is VariableKind.INTERVENTION:
                level = float(np.abs(z[k]).max())
                if rng.random() < expit(config.intervention_logit_base + config.intervention_logit_gain * level):
                    emit(spec, t, 1.0)
    for t in lab_t:
        k = int(round(t / step))
        for j, spec in enumerate(specs):
            if spec.kind is VariableKind.LAB and rng.random() >= config.lab_missing_prob:
                latent = float(spec.loading @ z[k]) + bias[j] + config.obs_noise_std * rng.standard_normal()
                emit(spec, t, spec.center + spec.spread * latent)

    events = pd.DataFrame(rows, columns=EVENT_COLUMNS).sort_values("t", kind="stable").reset_index(drop=True)
    stride = max(int(round(config.truth_step_minutes / step)), 1)
    idx = np.r_[np.arange(0, n_end + 1, stride)]
    if idx[-1] != n_end:
        idx = np.r_[idx, n_end]
    truth_risk = 1.0 - np.exp(-cum[idx])
    return SynthEncounter(
        patient_id, encounter_id, events, survived, t_grid[idx].copy(), truth_risk, severity, end
    )


def generate_patient(config: SynthConfig, patient_index: int, catalog: VariableCatalog | None = None,
                     specs=None, base_hazard: float | None = None) -> list[SynthEncounter]:
    """All encounters of one patient; depends only on (seed, patient_index)."""
    catalog = catalog or load_demo_catalog()
    specs = specs or variable_specs(catalog, config)
    base_hazard = resolved_base_hazard(config) if base_hazard is None else base_hazard
    A, L = config.drift_matrix(), config.diffusion()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, patient_index]))
    n_enc = 1 + int(rng.choice(len(config.encounter_count_probs), p=config.encounter_count_probs))
    log_sev = config.severity_log_std_patient * rng.standard_normal()
    bias = config.patient_bias_std * rng.standard_normal(len(specs))
    age = float(rng.uniform(0.1, 18.0))
    pid = f"P{patient_index:05d}"
    out = []
    for e in range(n_enc):
        erng = np.random.default_rng(np.random.SeedSequence([config.seed, 2, patient_index, e]))
        out.append(_encounter(erng, config, specs, A, L, base_hazard, pid, f"{pid}-E{e + 1}", log_sev, bias, age))
    return out


def generate_cohort(config: SynthConfig, catalog: VariableCatalog | None = None) -> list[SynthEncounter]:
    catalog = catalog or load_demo_catalog()
    specs = variable_specs(catalog, config)
    base_hazard = resolved_base_hazard(config)
    cohort = []
    for p in range(config.n_patients):
        cohort.extend(generate_patient(config, p, catalog, specs, base_hazard))
    return cohort


def cohort_events(cohort: Sequence[SynthEncounter]) -> pd.DataFrame:
    return pd.concat([e.events for e in cohort], ignore_index=True)


def cohort_labels(cohort: Sequence[SynthEncounter]) -> dict[str, bool]:
    return {e.encounter_id: e.survived for e in cohort}


def mortality_fraction(cohort: Sequence[SynthEncounter]) -> float:
    return float(np.mean([not e.survived for e in cohort]))


def oracle_auc_bound(cohort: Sequence[SynthEncounter], hours: float = 12.0, min_hours: float | None = None) -> float:
    """AUC of the generating risk at ``hours`` against the labels.

    ``min_hours`` (default: ``hours``) keeps only encounters lasting that long,
    matching the evaluation population.
    """
    min_hours = hours if min_hours is None else min_hours
    kept = [e for e in cohort if e.duration_minutes >= min_hours * 60.0]
    labels = np.array([0 if e.survived else 1 for e in kept])
    if len(kept) == 0 or labels.min() == labels.max():
        raise SingleClassError("oracle AUC needs survivors and non-survivors")
    scores = np.array([e.risk_at(hours * 60.0) for e in kept])
    return roc_auc(scores, labels).auc


def write_cohort(cohort: Sequence[SynthEncounter], out_dir) -> dict[str, Path]:
    """events.csv and labels.csv for the pipeline; truth/ground_truth.csv kept apart."""
    out = Path(out_dir)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    paths = {"events": out / "events.csv", "labels": out / "labels.csv", "truth": out / "truth" / "ground_truth.csv"}
    write_events_csv(cohort_events(cohort), paths["events"])
    write_labels_csv(cohort_labels(cohort), paths["labels"])
    with open(paths["truth"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(TRUTH_HEADER) + "\n")
        for e in cohort:
            for t, r in zip(e.truth_t, e.truth_risk):
                fh.write(f"{e.encounter_id},{float(t)!r},{float(r)!r}\n")
    return paths

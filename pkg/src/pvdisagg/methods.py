"""Capacity estimators for behind-the-meter PV disaggregation.

All four methods model aggregate generation as a nonnegative combination of
plane-of-array irradiance templates:

    G_k(alpha) = sum_j alpha_j * I[j, k] / 1000      [kW, alpha in kWp]

and explain the measured feeder flow P (consumption positive) as
P = L - G with L >= 0.  They differ in how they separate the demand L
from the generation signature:

  A  -- L1 fit on sample-to-sample differences (demand drops out when it
        moves slower than irradiance).
  B  -- joint quadratic fit of (L, alpha) with a total-variation penalty
        keeping L piecewise-constant.
  C  -- joint quadratic fit with L held constant on fixed-length blocks.
  D  -- band-pass both sides so only cloud-band fluctuations remain, then
        a bisquare-weighted robust regression on the filtered signals.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import dsp
from .errors import (AlignmentError, BankMismatchError,
                     DegenerateWeightsError)
from .optim import (LinearProgram, QuadraticProgram, SolverReport,
                    irls_bisquare, solve_l1_trend_qp, solve_lp, solve_qp)
from .solar import PlaneBank
from .timeseries import UNIT_KW, TimeSeries

KW_PER_WM2 = 1e-3  # irradiance templates are W/m^2, capacities kWp


@dataclass
class CapacityVector:
    """Per-plane capacity estimate, tied to the bank it was fit against."""

    alpha: np.ndarray  # (J,) kWp, nonnegative
    bank_id: str
    report: Optional[SolverReport] = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.ndim != 1 or not np.all(np.isfinite(self.alpha)):
            raise ValueError("alpha must be a finite 1-d vector")
        if np.any(self.alpha < 0):
            raise ValueError("alpha must be nonnegative")

    @property
    def total_kwp(self) -> float:
        return float(self.alpha.sum())


@dataclass
class MethodParams:
    """Method selector plus everything a fit needs besides the data."""

    method: str
    sampling_period: int
    lam: float = 0.0
    c: int = 1
    f_low: Optional[float] = None
    f_high: Optional[float] = None
    irls_tuning: float = 4.685
    night_threshold: float = 5.0

    def validate(self) -> None:
        if self.method not in ("A", "B", "C", "D"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.sampling_period <= 0:
            raise ValueError("sampling_period must be positive")
        if self.method == "B" and self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.method == "C":
            if int(self.c) != self.c or self.c < 1:
                raise ValueError("c must be a positive integer")
        if self.method == "D":
            if self.f_low is None or self.f_high is None:
                raise ValueError("method D needs f_low and f_high")
            if not (0.0 < self.f_low < self.f_high):
                raise ValueError("need 0 < f_low < f_high")
            if self.irls_tuning <= 0:
                raise ValueError("irls_tuning must be positive")

    def to_dict(self) -> dict:
        out = {"method": self.method,
               "sampling_period": self.sampling_period}
        if self.method == "B":
            out["lam"] = self.lam
        if self.method == "C":
            out["c"] = int(self.c)
        if self.method == "D":
            out.update(f_low=self.f_low, f_high=self.f_high,
                       irls_tuning=self.irls_tuning)
        out["night_threshold"] = self.night_threshold
        return out


@dataclass
class DisaggregationResult:
    g_hat: TimeSeries
    l_hat: TimeSeries
    alpha: CapacityVector
    report: SolverReport


def _check_bank(p: TimeSeries, bank: PlaneBank) -> None:
    if (p.start_epoch != bank.start_epoch or p.period != bank.period
            or len(p) != bank.n_samples):
        raise AlignmentError(
            "series and plane bank are not on the same sampling grid")


def _segment_bounds(n: int, segment_length: Optional[int]):
    """Half-open [a, b) chunks; None means one contiguous segment."""
    if segment_length is None or segment_length >= n:
        return [(0, n)]
    if segment_length < 2:
        raise ValueError("segment_length must be at least 2")
    return [(a, min(a + segment_length, n))
            for a in range(0, n, segment_length)]


def _column_scales(m: np.ndarray) -> np.ndarray:
    s = np.max(np.abs(m), axis=0)
    s[s == 0] = 1.0
    return s


def predict_generation(alpha: CapacityVector, bank: PlaneBank) -> TimeSeries:
    """Aggregate generation implied by a capacity vector, in kW."""
    if alpha.bank_id != bank.geometry_hash:
        raise BankMismatchError(
            f"capacity vector was fit against bank {alpha.bank_id}, "
            f"got {bank.geometry_hash}")
    if alpha.alpha.size != bank.n_planes:
        raise BankMismatchError("capacity vector length != bank planes")
    g = (alpha.alpha @ bank.irradiance) * KW_PER_WM2
    return TimeSeries(bank.start_epoch, bank.period, g, UNIT_KW)


def _clip_alpha(raw: np.ndarray, tol: float = 1e-5) -> np.ndarray:
    if np.any(raw < -tol * max(1.0, float(np.max(np.abs(raw), initial=0.0)))):
        raise AssertionError(
            f"solver returned a significantly negative capacity: {raw}")
    return np.clip(raw, 0.0, None)


def fit_method_a(p: TimeSeries, bank: PlaneBank, *,
                 mask: Optional[np.ndarray] = None,
                 segment_length: Optional[int] = None,
                 tol: float = 1e-6,
                 max_iter: int = 50000) -> CapacityVector:
    """L1 fit on first differences: min sum_k |dP_k + dG_k(alpha)|.

    Difference pairs never straddle a segment boundary, and with a mask
    only pairs whose both endpoints are kept contribute.
    """
    _check_bank(p, bank)
    k, j = len(p), bank.n_planes
    if k < j + 1:
        raise ValueError(f"need at least {j + 1} samples for {j} planes")

    pairs = []
    for a, b in _segment_bounds(k, segment_length):
        for i in range(a + 1, b):
            if mask is None or (mask[i - 1] and mask[i]):
                pairs.append(i)
    if not pairs:
        raise ValueError("no usable sample-to-sample difference pairs")
    pairs = np.asarray(pairs)

    dp = p.values[pairs] - p.values[pairs - 1]
    dm = (bank.irradiance[:, pairs] - bank.irradiance[:, pairs - 1]).T
    dm = dm * KW_PER_WM2
    scale = _column_scales(dm)
    c_mat = dm / scale

    r = pairs.size
    # variables [alpha_scaled (j); t (r)], minimize sum t subject to
    #   |dp + C a| <= t elementwise, a >= 0, t >= 0.
    cost = np.concatenate([np.zeros(j), np.ones(r)])
    eye_r = sp.identity(r, format="csc")
    c_sp = sp.csc_matrix(c_mat)
    a_ub = sp.vstack([sp.hstack([c_sp, -eye_r]),
                      sp.hstack([-c_sp, -eye_r])], format="csc")
    b_ub = np.concatenate([-dp, dp])
    lb = np.zeros(j + r)
    x, report = solve_lp(LinearProgram(cost, a_ub, b_ub, lb=lb),
                         tol=tol, max_iter=max_iter)
    alpha = _clip_alpha(x[:j] / scale)
    return CapacityVector(alpha, bank.geometry_hash, report)


def _stacked_lsq(p: TimeSeries, bank: PlaneBank,
                 mask: Optional[np.ndarray]):
    """Shared model for B and C: variables x = [L (k); alpha_scaled (j)].

    Returns (h, f, scale) for the residual term
    sum_{masked k} (P_k - (L_k - G_k))^2 written as |S x - P|^2 with
    S = [E, -C]; h = S^T S and f = S^T P so that
    1/2 x^T h x - f^T x equals half that squared norm (constant dropped).
    """
    k, j = len(p), bank.n_planes
    m = bank.irradiance.T * KW_PER_WM2  # (k, j)
    scale = _column_scales(m)
    c_dense = m / scale
    keep = np.arange(k) if mask is None else np.flatnonzero(mask)
    if keep.size < j + 1:
        raise ValueError("not enough usable samples for the fit")
    sel = sp.csr_matrix((np.ones(keep.size), (np.arange(keep.size), keep)),
                        shape=(keep.size, k))
    s_mat = sp.hstack([sel, sp.csc_matrix(-c_dense[keep])], format="csc")
    h = (s_mat.T @ s_mat).tocsc()
    f = s_mat.T @ p.values[keep]
    return h, f, scale


def _diff_rows(k: int, j: int, bounds) -> sp.csc_matrix:
    """First-difference operator on the L block, segment-local rows only."""
    rows, cols, vals = [], [], []
    r = 0
    for a, b in bounds:
        for i in range(a + 1, b):
            rows += [r, r]
            cols += [i - 1, i]
            vals += [-1.0, 1.0]
            r += 1
    if r == 0:
        raise ValueError("no difference rows (segments too short)")
    return sp.csc_matrix((vals, (rows, cols)), shape=(r, k + j))


def fit_method_b(p: TimeSeries, bank: PlaneBank, lam: float, *,
                 mask: Optional[np.ndarray] = None,
                 segment_length: Optional[int] = None,
                 tol: float = 1e-6,
                 max_iter: int = 50000,
                 beta_reg: float = 1e-4):
    """Joint (L, alpha) quadratic fit with a total-variation penalty on L.

    Objective: sum (P - (L - G))^2 + lam * sum |L_{i+1} - L_i|, with
    L >= 0 and alpha >= 0.  Returns (capacities, demand trajectory).
    """
    _check_bank(p, bank)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    k, j = len(p), bank.n_planes
    h, f, scale = _stacked_lsq(p, bank, mask)
    d_op = _diff_rows(k, j, _segment_bounds(k, segment_length))
    prog = QuadraticProgram(h, f, nonneg=np.ones(k + j, dtype=bool),
                            beta_reg=beta_reg)
    # h is S^T S, so the quadratic part carries 1/2 |Sx - P|^2; halve the
    # penalty weight to keep the stated lam ratio.
    x, report = solve_l1_trend_qp(prog, d_op, lam / 2.0,
                                  tol=tol, max_iter=max_iter)
    alpha = _clip_alpha(x[k:k + j] / scale)
    l_hat = p.with_values(np.clip(x[:k], 0.0, None), unit=UNIT_KW)
    return CapacityVector(alpha, bank.geometry_hash, report), l_hat


def fit_method_c(p: TimeSeries, bank: PlaneBank, c: int, *,
                 mask: Optional[np.ndarray] = None,
                 segment_length: Optional[int] = None,
                 tol: float = 1e-6,
                 max_iter: int = 50000,
                 beta_reg: float = 1e-4):
    """Joint (L, alpha) quadratic fit with L constant on length-c blocks.

    Blocks restart at every segment boundary; a trailing shorter block is
    constrained the same way.  c = 1 leaves L free per sample (the fit is
    then an interpolation with zero residual; capacities are meaningless
    but the solve is still well-posed thanks to the nonnegativity and the
    quadratic regularization).
    """
    _check_bank(p, bank)
    c = int(c)
    if c < 1:
        raise ValueError("c must be a positive integer")
    k, j = len(p), bank.n_planes
    h, f, scale = _stacked_lsq(p, bank, mask)

    rows, cols, vals = [], [], []
    r = 0
    for a, b in _segment_bounds(k, segment_length):
        for start in range(a, b, c):
            stop = min(start + c, b)
            for i in range(start + 1, stop):
                rows += [r, r]
                cols += [i - 1, i]
                vals += [-1.0, 1.0]
                r += 1
    a_eq = None
    b_eq = None
    if r:
        a_eq = sp.csc_matrix((vals, (rows, cols)), shape=(r, k + j))
        b_eq = np.zeros(r)
    prog = QuadraticProgram(h, f, a_eq=a_eq, b_eq=b_eq,
                            nonneg=np.ones(k + j, dtype=bool),
                            beta_reg=beta_reg)
    x, report = solve_qp(prog, tol=tol, max_iter=max_iter)
    alpha = _clip_alpha(x[k:k + j] / scale)
    l_hat = p.with_values(np.clip(x[:k], 0.0, None), unit=UNIT_KW)
    return CapacityVector(alpha, bank.geometry_hash, report), l_hat


def fit_method_d(p: TimeSeries, bank: PlaneBank,
                 f_low: float, f_high: float, tuning: float = 4.685, *,
                 mask: Optional[np.ndarray] = None,
                 segment_length: Optional[int] = None,
                 tol: float = 1e-8,
                 max_iter: int = 50) -> CapacityVector:
    """Band-pass both sides, then robust-regress P on the filtered bank.

    Filtering runs independently on each contiguous segment (so day
    boundaries never leak through the filter); the mask is applied to the
    filtered samples afterwards.  In the pass band the demand is
    attenuated away and P ~ -G, hence the design matrix -I_filtered/1000.
    """
    _check_bank(p, bank)
    k, j = len(p), bank.n_planes
    filt = dsp.design_bandpass(f_low, f_high, 1.0 / p.period)

    y = np.empty(k)
    x_mat = np.empty((k, j))
    for a, b in _segment_bounds(k, segment_length):
        y[a:b] = dsp.apply_array(filt, p.values[a:b])
        for jj in range(j):
            x_mat[a:b, jj] = dsp.apply_array(filt, bank.irradiance[jj, a:b])
    x_mat *= -KW_PER_WM2
    # a band that excludes all bank energy leaves only filter ring-down in
    # the design matrix; regressing on that would return noise dressed up
    # as capacity, so refuse instead
    bank_scale = float(np.max(bank.irradiance, initial=0.0)) * KW_PER_WM2
    if np.max(np.abs(x_mat), initial=0.0) <= 1e-8 * max(bank_scale, 1e-12):
        raise DegenerateWeightsError(
            "pass band contains no irradiance signal (filtered bank is "
            "numerically zero); widen [f_low, f_high]")
    if mask is not None:
        keep = np.flatnonzero(mask)
        if keep.size < j + 1:
            raise ValueError("not enough usable samples for the fit")
        y = y[keep]
        x_mat = x_mat[keep]
    alpha, report = irls_bisquare(x_mat, y, tuning=tuning, nonneg=True,
                                  tol=tol, max_iter=max_iter)
    return CapacityVector(_clip_alpha(alpha), bank.geometry_hash, report)


def fit(p: TimeSeries, bank: PlaneBank, params: MethodParams, *,
        night_mask: Optional[np.ndarray] = None,
        segment_length: Optional[int] = None):
    """Dispatch a fit by MethodParams.

    The night mask (daylight True) is honored by the difference and
    band-pass methods only; the joint quadratic fits B and C keep the full
    grid because their demand block needs the night samples to anchor L.
    Returns (CapacityVector, demand TimeSeries or None, wall seconds).
    """
    params.validate()
    t0 = time.perf_counter()
    l_hat = None
    if params.method == "A":
        cap = fit_method_a(p, bank, mask=night_mask,
                           segment_length=segment_length)
    elif params.method == "B":
        cap, l_hat = fit_method_b(p, bank, params.lam,
                                  segment_length=segment_length)
    elif params.method == "C":
        cap, l_hat = fit_method_c(p, bank, int(params.c),
                                  segment_length=segment_length)
    else:
        cap = fit_method_d(p, bank, params.f_low, params.f_high,
                           params.irls_tuning, mask=night_mask,
                           segment_length=segment_length)
    return cap, l_hat, time.perf_counter() - t0


def disaggregate(p: TimeSeries, alpha: CapacityVector,
                 bank: PlaneBank) -> DisaggregationResult:
    """Split P into generation and demand under the passive-sign identity.

    L_hat is reconstructed as P + G_hat before any clipping, so
    L_hat - G_hat == P holds exactly per sample; the count of samples
    clipped at L >= 0 afterwards is reported, never silently absorbed.
    """
    _check_bank(p, bank)
    g_hat = predict_generation(alpha, bank)
    l_raw = p.values + g_hat.values
    residual = float(np.max(np.abs((l_raw - g_hat.values) - p.values)))
    clipped = l_raw < 0
    clip_count = int(np.count_nonzero(clipped))
    l_vals = np.clip(l_raw, 0.0, None)
    # audit: the pre-clip demand is P + G by construction, so the clip is
    # the only step that may touch it — every kept sample must be bitwise
    # unchanged and every clipped sample exactly zero (NaNs count as
    # violations because they fail both comparisons)
    violations = int(np.count_nonzero(l_vals[~clipped] != l_raw[~clipped]))
    violations += int(np.count_nonzero(l_vals[clipped] != 0.0))
    l_hat = p.with_values(l_vals, unit=UNIT_KW)
    notes = {"clip_count": clip_count,
             "identity_violations": violations,
             "identity_max_abs_error_kw": residual,
             "training_status": (alpha.report.status
                                 if alpha.report else "unknown")}
    report = SolverReport(objective=0.0, iterations=0,
                          primal_residual=residual, dual_residual=0.0,
                          duality_gap=0.0, converged=(violations == 0),
                          wall_time=0.0, status="ok", notes=notes)
    return DisaggregationResult(g_hat, l_hat,
                                CapacityVector(alpha.alpha, alpha.bank_id,
                                               alpha.report), report)

"""Residual change detection with parallel Gaussian and KDE GLRTs.

Two windows slide over the scalar residual: a reference window of ``lam``
samples, a gap of ``o`` samples, then a test window holding the ``mu`` most
recent samples.  Each detector compares the test window's own fitted model
against the reference model; the combined alarm is the OR of the two
threshold exceedances.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geodesy import GeodeticPoint, to_ned_arrays

VAR_FLOOR = 1e-6
DENSITY_FLOOR = 1e-300
LOG_2PI = math.log(2.0 * math.pi)
TROPICAL_YEAR_S = 365.2422 * 86400.0


# --- residual ----------------------------------------------------------------

def residual(x_gnss: GeodeticPoint, x_r: GeodeticPoint) -> float:
    """Distance in metres between the GNSS fix and the radar estimate."""
    n, e = to_ned_arrays(x_r.lat, x_r.lon, x_gnss)
    return float(math.hypot(float(n), float(e)))


@dataclass(frozen=True)
class ResidualSample:
    t: float
    r: float

    def __post_init__(self) -> None:
        if not self.r >= 0:
            raise ValueError(f"residual must be >= 0, got {self.r}")


# --- statistics --------------------------------------------------------------

def _gauss_from_moments(m0, v0, m1, s1, mu, var_floor):
    v0 = np.maximum(v0, var_floor)
    v1 = np.maximum(s1, var_floor)
    # sum over the test window of log N(r; m1, v1) - log N(r; m0, v0), with
    # sum (r - m1)^2 = mu * s1 and sum (r - m0)^2 = mu * (s1 + (m1 - m0)^2)
    return 0.5 * mu * (np.log(v0 / v1) - s1 / v1 + (s1 + (m1 - m0) ** 2) / v0)


def gaussian_glrt(window_l, window_m, var_floor: float = VAR_FLOOR) -> float | None:
    """Gaussian GLR of the test window against the reference window.

    Returns ``None`` when either window has fewer than two samples.
    """
    l = np.asarray(window_l, dtype=float)
    m = np.asarray(window_m, dtype=float)
    if len(l) < 2 or len(m) < 2:
        return None
    return float(_gauss_from_moments(l.mean(), l.var(), m.mean(), m.var(), len(m), var_floor))


def kde_density(x, samples, h: float, leave_one_out: bool = False):
    """Gaussian-kernel density of ``samples`` evaluated at ``x``.

    With ``leave_one_out`` the i-th point of ``x`` is assumed to be the i-th
    sample and is excluded from its own estimate.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(samples, dtype=float)
    u = (x[..., :, None] - s[..., None, :]) / h
    k = np.exp(-0.5 * u * u)
    n = s.shape[-1]
    if leave_one_out:
        k_sum = k.sum(axis=-1) - 1.0
        n -= 1
    else:
        k_sum = k.sum(axis=-1)
    return k_sum / (n * h * math.sqrt(2.0 * math.pi))


def kde_glrt(window_l, window_m, h: float, leave_one_out: bool = False) -> float | None:
    """KDE GLR: sum over the test window of log p(r; M) - log p(r; L)."""
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    l = np.asarray(window_l, dtype=float)
    m = np.asarray(window_m, dtype=float)
    if len(l) < 2 or len(m) < 2:
        return None
    p_m = np.maximum(kde_density(m, m, h, leave_one_out), DENSITY_FLOOR)
    p_l = np.maximum(kde_density(m, l, h), DENSITY_FLOOR)
    return float(np.sum(np.log(p_m) - np.log(p_l)))


# --- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class DetectorConfig:
    lam: int = 218
    mu: int = 109
    o: int = 121
    h: float = 2.0
    gamma_gauss: float = math.inf
    gamma_kde: float = math.inf
    leave_one_out: bool = False

    def __post_init__(self) -> None:
        if self.lam < 2 or self.mu < 2:
            raise ValueError("window lengths must be >= 2")
        if self.o < 0:
            raise ValueError("gap must be >= 0")
        if self.h <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def span(self) -> int:
        return self.lam + self.o + self.mu

    def with_thresholds(self, gamma_gauss: float, gamma_kde: float) -> DetectorConfig:
        return replace(self, gamma_gauss=float(gamma_gauss), gamma_kde=float(gamma_kde))

    @classmethod
    def from_minutes(cls, mu_min: float, lam_min: float, o_min: float, sample_period: float,
                     **kw) -> DetectorConfig:
        def n(m):
            return max(int(round(m * 60.0 / sample_period)), 0)
        return cls(lam=max(n(lam_min), 2), mu=max(n(mu_min), 2), o=n(o_min), **kw)


def split_windows(buffer, cfg: DetectorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Reference and test windows from the last ``cfg.span`` samples."""
    b = np.asarray(buffer, dtype=float)[-cfg.span:]
    return b[:cfg.lam], b[cfg.lam + cfg.o:]


# --- batch statistics over a whole series -----------------------------------------

def _windows(r: np.ndarray, cfg: DetectorConfig, lo: int, hi: int):
    """Reference/test windows ending at indices ``lo..hi-1``."""
    seg = r[lo - cfg.span + 1:hi]
    view = sliding_window_view(seg, cfg.span)
    return view[:, :cfg.lam], view[:, cfg.lam + cfg.o:]


def gaussian_glrt_series(r, cfg: DetectorConfig, chunk: int = 8192,
                         var_floor: float = VAR_FLOOR) -> np.ndarray:
    """Gaussian statistic at every index; NaN until the windows are full."""
    r = np.asarray(r, dtype=float)
    out = np.full(len(r), np.nan)
    for lo in range(cfg.span - 1, len(r), chunk):
        hi = min(lo + chunk, len(r))
        wl, wm = _windows(r, cfg, lo, hi)
        out[lo:hi] = _gauss_from_moments(wl.mean(axis=1), wl.var(axis=1),
                                         wm.mean(axis=1), wm.var(axis=1), cfg.mu, var_floor)
    return out


def kde_glrt_series(r, cfg: DetectorConfig, max_elems: int = 2_000_000) -> np.ndarray:
    """KDE statistic at every index; NaN until the windows are full."""
    r = np.asarray(r, dtype=float)
    out = np.full(len(r), np.nan)
    chunk = max(1, max_elems // (cfg.mu * (cfg.mu + cfg.lam)))
    for lo in range(cfg.span - 1, len(r), chunk):
        hi = min(lo + chunk, len(r))
        wl, wm = _windows(r, cfg, lo, hi)
        p_m = np.maximum(kde_density(wm, wm, cfg.h, cfg.leave_one_out), DENSITY_FLOOR)
        p_l = np.maximum(kde_density(wm, wl, cfg.h), DENSITY_FLOOR)
        out[lo:hi] = np.sum(np.log(p_m) - np.log(p_l), axis=1)
    return out


# --- thresholds ----------------------------------------------------------------

@dataclass(frozen=True)
class Threshold:
    gamma: float
    p_fa: float
    n_samples: int
    extrapolated: bool


def calibrate_threshold(g_samples, p_fa: float) -> Threshold:
    """Smallest nominal statistic value whose ECDF reaches ``1 - p_fa``.

    When ``p_fa`` is below the ECDF resolution ``1/n`` the maximum sample is
    returned and the result is flagged as extrapolated.
    """
    g = np.asarray(g_samples, dtype=float)
    g = np.sort(g[np.isfinite(g)])
    n = len(g)
    if n == 0:
        raise ValueError("no finite statistic samples to calibrate on")
    if not 0.0 <= p_fa <= 1.0:
        raise ValueError("p_fa must be a probability")
    # ECDF at the i-th order statistic (1-based) is i/n
    i = math.ceil(n * (1.0 - p_fa) - 1e-9)
    i = min(max(i, 1), n)
    return Threshold(float(g[i - 1]), p_fa, n, p_fa < 1.0 / n)


def pfa_from_false_alarm_time(sample_period: float, t_fa: float = TROPICAL_YEAR_S) -> float:
    """Per-sample false-alarm probability for a mean time between false alarms."""
    return sample_period / t_fa


# --- streaming detector ----------------------------------------------------------

WARMING_UP, NOMINAL, ALARM = "warming-up", "nominal", "alarm"


@dataclass(frozen=True)
class Decision:
    t: float
    r: float
    status: str
    g_gauss: float
    g_kde: float
    exceed_gauss: bool
    exceed_kde: bool
    alarm: bool
    source: str


class ChangeDetector:
    """Streaming combined GLRT.  One owner, sequential ``step`` calls.

    The alarm latches once raised; ``reset`` clears it.  ``source`` reports
    which detectors have crossed since the last reset.
    """

    def __init__(self, config: DetectorConfig):
        self.config = config
        self.buffer: deque[float] = deque(maxlen=config.span)
        self.last_t: float | None = None
        self.g_gauss = math.nan
        self.g_kde = math.nan
        self._fired: set[str] = set()

    @property
    def alarm(self) -> bool:
        return bool(self._fired)

    @property
    def source(self) -> str:
        if self._fired == {"gauss", "kde"}:
            return "both"
        return next(iter(self._fired), "none")

    def reset(self) -> None:
        self._fired.clear()

    def step(self, sample: ResidualSample) -> Decision:
        if self.last_t is not None and sample.t <= self.last_t:
            raise ValueError(f"timestamp {sample.t} not after {self.last_t}")
        self.last_t = sample.t
        self.buffer.append(sample.r)
        cfg = self.config
        if len(self.buffer) < cfg.span:
            return Decision(sample.t, sample.r, WARMING_UP, math.nan, math.nan,
                            False, False, self.alarm, self.source)
        wl, wm = split_windows(self.buffer, cfg)
        self.g_gauss = gaussian_glrt(wl, wm)
        self.g_kde = kde_glrt(wl, wm, cfg.h, cfg.leave_one_out)
        ex_g = self.g_gauss > cfg.gamma_gauss
        ex_k = self.g_kde > cfg.gamma_kde
        if ex_g:
            self._fired.add("gauss")
        if ex_k:
            self._fired.add("kde")
        return Decision(sample.t, sample.r, ALARM if self.alarm else NOMINAL,
                        self.g_gauss, self.g_kde, ex_g, ex_k, self.alarm, self.source)


# --- CSV I/O -------------------------------------------------------------------

TRACE_COLUMNS = ("t_s", "r_m", "g_gauss", "g_kde", "alarm", "source")


def read_residual_csv(path) -> list[ResidualSample]:
    with open(Path(path), newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"t_s", "r_m"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns t_s, r_m")
        return [ResidualSample(float(row["t_s"]), float(row["r_m"])) for row in reader]


def write_residual_csv(samples, path) -> None:
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("t_s", "r_m"))
        for s in samples:
            w.writerow((repr(float(s.t)), repr(float(s.r))))


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_trace_csv(decisions, path) -> None:
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_COLUMNS)
        for d in decisions:
            w.writerow((repr(float(d.t)), repr(float(d.r)), _fmt(d.g_gauss), _fmt(d.g_kde),
                        int(d.alarm), d.source))

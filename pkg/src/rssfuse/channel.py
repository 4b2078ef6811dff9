"""Path-loss channel models for RSS ranging.

Three model families are supported:

* ``Ieee802154`` -- the piecewise 802.15.4 indoor model, breakpoint at 8 m.
* ``LogDistance`` -- RSS(d) = a - 10 n log10(d), with a the RSS at 1 m.
* ``LogDistanceClamped`` -- the log model restricted to a validity radius.

All models map a transmitter-receiver distance in meters to an expected RSS
in dBm. Functions accept scalars or numpy arrays of distances.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np

LOG10_E = math.log10(math.e)

# 802.15.4 piecewise constants (dB); breakpoint in meters
IEEE_BREAKPOINT = 8.0
IEEE_NEAR_LOSS = 40.2
IEEE_NEAR_EXPONENT = 2.0
IEEE_FAR_LOSS = 58.5
IEEE_FAR_EXPONENT = 3.3


class ChannelDomainError(ValueError):
    """Distance or RSS outside the domain of a channel model."""


class DegenerateDesignError(ValueError):
    """Fit samples do not determine both intercept and exponent."""


@dataclass(frozen=True)
class Ieee802154:
    tx_power: float = -0.1
    sigma: float = 2.3662

    def __post_init__(self):
        if not math.isfinite(self.tx_power):
            raise ChannelDomainError("tx_power must be finite")
        if not self.sigma >= 0:
            raise ChannelDomainError(f"sigma must be >= 0, got {self.sigma}")

    # Intercepts are sums of decimal dB constants; rounding to 1e-9 dB keeps
    # binary noise out (-0.1 - 40.2 would otherwise give -40.300000000000004).
    @property
    def near_intercept(self) -> float:
        return round(self.tx_power - IEEE_NEAR_LOSS, 9)

    @property
    def far_intercept(self) -> float:
        return round(self.tx_power - IEEE_FAR_LOSS, 9)


@dataclass(frozen=True)
class LogDistance:
    a: float
    n: float
    sigma: float = 0.0

    def __post_init__(self):
        _check_log_params(self.a, self.n, self.sigma)


@dataclass(frozen=True)
class LogDistanceClamped:
    """Log-distance model that is only trusted up to ``d_max`` meters.

    Distances beyond ``d_max`` are still evaluated; use :func:`in_validity`
    or :func:`predict_rss_flagged` to find out whether to keep them.
    """

    a: float
    n: float
    sigma: float = 0.0
    d_max: float = 8.1

    def __post_init__(self):
        _check_log_params(self.a, self.n, self.sigma)
        if not (self.d_max > 0 and math.isfinite(self.d_max)):
            raise ChannelDomainError(f"d_max must be positive, got {self.d_max}")


PathLossModel = Union[Ieee802154, LogDistance, LogDistanceClamped]

# Fitted indoor parameters (dBm at 1 m, exponent, shadowing std-dev in dB)
FITTED_A = -37.3420
FITTED_N = 1.9236
FITTED_SIGMA = 3.0130


def _check_log_params(a, n, sigma):
    if not math.isfinite(a):
        raise ChannelDomainError("a must be finite")
    if not (n > 0 and math.isfinite(n)):
        raise ChannelDomainError(f"loss exponent n must be > 0, got {n}")
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise ChannelDomainError(f"sigma must be >= 0, got {sigma}")


def _check_distance(distance):
    d = np.asarray(distance, dtype=float)
    # min() is NaN if any entry is NaN, so one comparison covers it
    if d.size and not (d.min() > 0 and d.max() < math.inf):
        raise ChannelDomainError(f"distance must be finite and > 0, got {distance!r}")
    return d


def _as_output(value, like):
    return float(value) if np.ndim(like) == 0 else value


def predict_rss(model: PathLossModel, distance):
    """Noiseless expected RSS in dBm at ``distance`` meters."""
    d = _check_distance(distance)
    if isinstance(model, Ieee802154):
        near = model.near_intercept - 10 * IEEE_NEAR_EXPONENT * np.log10(d)
        far = model.far_intercept - 10 * IEEE_FAR_EXPONENT * np.log10(d)
        rss = np.where(d <= IEEE_BREAKPOINT, near, far)
    elif isinstance(model, (LogDistance, LogDistanceClamped)):
        rss = model.a - 10 * model.n * np.log10(d)
    else:
        raise TypeError(f"unsupported channel model {model!r}")
    return _as_output(rss, distance)


def rss_slope(model: PathLossModel, distance):
    """Derivative of :func:`predict_rss` with respect to distance (dB/m).

    For the piecewise model this is the slope of whichever branch the
    distance falls on; the jump at the breakpoint is not differentiable.
    """
    d = _check_distance(distance)
    if isinstance(model, Ieee802154):
        n = np.where(d <= IEEE_BREAKPOINT, IEEE_NEAR_EXPONENT, IEEE_FAR_EXPONENT)
    else:
        n = model.n
    return _as_output(-10 * n * LOG10_E / d, distance)


def in_validity(model: PathLossModel, distance):
    """True where ``distance`` lies inside the model's trusted range."""
    d = _check_distance(distance)
    if isinstance(model, LogDistanceClamped):
        valid = d <= model.d_max
    else:
        valid = np.ones_like(d, dtype=bool)
    return bool(valid) if np.ndim(distance) == 0 else valid


class RssPrediction(NamedTuple):
    rss: float
    valid: bool


def predict_rss_flagged(model: PathLossModel, distance: float) -> RssPrediction:
    """Like :func:`predict_rss` but also reports validity of the distance."""
    return RssPrediction(predict_rss(model, distance), in_validity(model, distance))


def sample_rss(model: PathLossModel, distance, rng: np.random.Generator):
    """Expected RSS plus zero-mean Gaussian shadowing drawn from ``rng``.

    Exactly one normal variate is drawn per distance, whatever sigma is, so
    the stream position does not depend on the model.
    """
    mean = predict_rss(model, distance)
    noise = rng.normal(0.0, model.sigma, size=np.shape(distance))
    return _as_output(mean + noise, distance)


class InverseResult(NamedTuple):
    distance: float
    ambiguous: bool


def invert_rss_flagged(model: PathLossModel, rss: float) -> InverseResult:
    """Distance whose expected RSS equals ``rss``.

    The piecewise 802.15.4 model has a gap of ~30 dB at its breakpoint.
    RSS values falling in that gap have no exact preimage; the near-branch
    inverse is returned and flagged ambiguous.
    """
    if not math.isfinite(rss):
        raise ChannelDomainError(f"rss must be finite, got {rss!r}")
    if isinstance(model, Ieee802154):
        near = 10 ** ((model.near_intercept - rss) / (10 * IEEE_NEAR_EXPONENT))
        if near <= IEEE_BREAKPOINT * (1 + 1e-12):
            return InverseResult(near, False)
        far = 10 ** ((model.far_intercept - rss) / (10 * IEEE_FAR_EXPONENT))
        if far > IEEE_BREAKPOINT:
            return InverseResult(far, False)
        return InverseResult(near, True)
    if isinstance(model, (LogDistance, LogDistanceClamped)):
        return InverseResult(10 ** ((model.a - rss) / (10 * model.n)), False)
    raise TypeError(f"unsupported channel model {model!r}")


def invert_rss(model: PathLossModel, rss: float) -> float:
    return invert_rss_flagged(model, rss).distance


def drss(rss_ij, rss_0j):
    """Differential RSS: the shared intercept ``a`` cancels out."""
    a = np.asarray(rss_ij, dtype=float)
    b = np.asarray(rss_0j, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ChannelDomainError("drss inputs must be finite")
    return _as_output(a - b, rss_ij)


class RssSample(NamedTuple):
    distance: float
    rss: float


@dataclass(frozen=True)
class FitResult:
    a: float
    n: float
    sigma: float
    n_samples: int

    def as_model(self) -> LogDistance:
        return LogDistance(self.a, self.n, self.sigma)


def fit_log_model(samples: Sequence[RssSample]) -> FitResult:
    """Least-squares fit of ``rss = a - n * 10 log10(d)``.

    ``sigma`` is the sample standard deviation (ddof=1) of the residuals.
    """
    if len(samples) < 2:
        raise DegenerateDesignError(f"need at least 2 samples, got {len(samples)}")
    d = _check_distance([s[0] for s in samples])
    rss = np.asarray([s[1] for s in samples], dtype=float)
    if not np.all(np.isfinite(rss)):
        raise ChannelDomainError("rss samples must be finite")
    if np.unique(d).size < 2:
        raise DegenerateDesignError("need at least 2 distinct distances")

    regressor = -10 * np.log10(d)
    design = np.column_stack([np.ones_like(regressor), regressor])
    (a, n), *_ = np.linalg.lstsq(design, rss, rcond=None)
    residuals = rss - design @ np.array([a, n])
    sigma = float(np.std(residuals, ddof=1))
    return FitResult(float(a), float(n), sigma, len(samples))


class CsvFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


def read_samples_csv(path: str | Path) -> list[RssSample]:
    """Read ``distance_m,rss_dbm`` rows (header required)."""
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CsvFormatError("empty file, expected header distance_m,rss_dbm", 1)
        if [h.strip() for h in header] != ["distance_m", "rss_dbm"]:
            raise CsvFormatError(f"bad header {header!r}, expected distance_m,rss_dbm", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise CsvFormatError(f"expected 2 columns, got {len(row)}", line)
            try:
                d, rss = float(row[0]), float(row[1])
            except ValueError:
                raise CsvFormatError(f"non-numeric value in {row!r}", line) from None
            if not (math.isfinite(d) and d > 0 and math.isfinite(rss)):
                raise CsvFormatError(f"distance must be > 0 and values finite: {row!r}", line)
            samples.append(RssSample(d, rss))
    return samples


def write_samples_csv(path: str | Path, samples: Sequence[RssSample]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["distance_m", "rss_dbm"])
        for d, rss in samples:
            writer.writerow([repr(float(d)), repr(float(rss))])

"""Reconstruction-quality surrogate: Q as a function of channel bandwidth ratio and SNR.

Running the end-to-end neural video pipeline per slot is far too expensive for
a simulation loop, so quality is read from a stand-in model instead: either a
shipped closed-form curve calibrated to realistic WS-PSNR / WS-SSIM ranges, or
a bivariate polynomial fitted to measured (cbr, snr, quality) samples.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

# Largest channel bandwidth ratio: 96 channel dims per feature point over a
# 16x-downsampled grid of a 3-channel frame -> 96 / (16*16*3).
DEFAULT_CBR_MAX = 96.0 / (16 * 16 * 3)

METRIC_KINDS = ("ws_psnr", "ws_ssim")


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class QualitySample:
    cbr: float
    snr_db: float
    quality_db: float

    def __post_init__(self):
        if self.cbr <= 0:
            raise ValueError("cbr must be positive")
        if not math.isfinite(self.quality_db):
            raise ValueError("quality must be finite")


@dataclass(frozen=True)
class DefaultCurve:
    """Closed-form quality curve: log growth in cbr, logistic saturation in SNR.

    q(o, t) = base + log_gain * ln(1 + cbr_scale * o / o_max)
                   + snr_gain * sigmoid((t - snr_mid_db) / snr_width_db)

    The constants are synthetic calibrations to plausible metric ranges
    (roughly 28-37 dB for ws_psnr, 5-13.5 dB for ws_ssim); they are not
    measurements of any trained codec.
    """

    kind: str
    base: float
    log_gain: float
    cbr_scale: float
    snr_gain: float
    snr_mid_db: float
    snr_width_db: float
    o_max: float = DEFAULT_CBR_MAX

    def eval(self, cbr: float, snr_db: float) -> float:
        level = self.base + self.log_gain * math.log1p(self.cbr_scale * cbr / self.o_max)
        if snr_db == -math.inf:
            return level  # noise floor: the logistic term vanishes
        return level + self.snr_gain * _sigmoid((snr_db - self.snr_mid_db) / self.snr_width_db)


@dataclass(frozen=True)
class PolynomialSurrogate:
    """Least-squares bivariate polynomial over (cbr, snr_db).

    coeffs[i, j] multiplies cbr^i * snr^j. Evaluation clamps both inputs to
    the fitted support so the model is never queried where it can misbehave.
    """

    kind: str
    degree: int
    coeffs: np.ndarray
    o_max: float
    fit_residual: float
    cbr_range: tuple[float, float]
    snr_range: tuple[float, float]

    def eval(self, cbr: float, snr_db: float) -> float:
        o = min(max(cbr, self.cbr_range[0]), self.cbr_range[1])
        t = min(max(snr_db, self.snr_range[0]), self.snr_range[1])
        powers_o = o ** np.arange(self.degree + 1)
        powers_t = t ** np.arange(self.degree + 1)
        return float(powers_o @ self.coeffs @ powers_t)


SurrogateModel = DefaultCurve | PolynomialSurrogate

_DEFAULT_CONSTANTS = {
    "ws_psnr": dict(base=18.0, log_gain=4.0, cbr_scale=20.0,
                    snr_gain=6.0, snr_mid_db=2.0, snr_width_db=3.0),
    "ws_ssim": dict(base=4.0, log_gain=2.2, cbr_scale=20.0,
                    snr_gain=3.0, snr_mid_db=2.0, snr_width_db=3.0),
}


def default_surrogate(kind: str = "ws_psnr") -> DefaultCurve:
    if kind not in _DEFAULT_CONSTANTS:
        raise ValueError(f"unknown metric kind {kind!r}")
    return DefaultCurve(kind=kind, **_DEFAULT_CONSTANTS[kind])


def eval_quality(model: SurrogateModel, cbr: float, snr_db: float) -> float:
    """Quality in dB at the given operating point; cbr must lie in (0, o_max]."""
    if not 0.0 < cbr <= model.o_max:
        raise ValueError(f"cbr {cbr} outside (0, {model.o_max}]")
    return model.eval(cbr, snr_db)


def fit_surrogate(samples: list[QualitySample], degree: int,
                  kind: str = "ws_psnr", o_max: float = DEFAULT_CBR_MAX) -> PolynomialSurrogate:
    """Least-squares fit of a degree x degree tensor polynomial to the samples."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    n_coeffs = (degree + 1) ** 2
    if len(samples) < n_coeffs:
        raise ValueError(f"need at least {n_coeffs} samples for degree {degree}")
    o = np.array([s.cbr for s in samples])
    t = np.array([s.snr_db for s in samples])
    q = np.array([s.quality_db for s in samples])
    design = np.empty((len(samples), n_coeffs))
    for i in range(degree + 1):
        for j in range(degree + 1):
            design[:, i * (degree + 1) + j] = o ** i * t ** j
    solution, _, rank, _ = np.linalg.lstsq(design, q, rcond=None)
    if rank < n_coeffs:
        raise ValueError(
            f"degenerate sample support: design rank {rank} < {n_coeffs} coefficients"
        )
    residual = float(np.sqrt(np.mean((design @ solution - q) ** 2)))
    return PolynomialSurrogate(
        kind=kind,
        degree=degree,
        coeffs=solution.reshape(degree + 1, degree + 1),
        o_max=o_max,
        fit_residual=residual,
        cbr_range=(float(o.min()), float(o.max())),
        snr_range=(float(t.min()), float(t.max())),
    )


def save_model(model: SurrogateModel, path) -> None:
    if isinstance(model, DefaultCurve):
        payload = {"form": "default_curve", "kind": model.kind, "o_max": model.o_max,
                   "constants": {k: getattr(model, k) for k in
                                 ("base", "log_gain", "cbr_scale", "snr_gain",
                                  "snr_mid_db", "snr_width_db")}}
    else:
        payload = {"form": "polynomial", "kind": model.kind, "degree": model.degree,
                   "coeffs": model.coeffs.tolist(), "o_max": model.o_max,
                   "fit_residual": model.fit_residual,
                   "cbr_range": list(model.cbr_range), "snr_range": list(model.snr_range)}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_model(path) -> SurrogateModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("form") == "default_curve":
        return DefaultCurve(kind=payload["kind"], o_max=payload["o_max"],
                            **payload["constants"])
    if payload.get("form") == "polynomial":
        return PolynomialSurrogate(
            kind=payload["kind"], degree=payload["degree"],
            coeffs=np.asarray(payload["coeffs"], dtype=float),
            o_max=payload["o_max"], fit_residual=payload["fit_residual"],
            cbr_range=tuple(payload["cbr_range"]), snr_range=tuple(payload["snr_range"]),
        )
    raise ValueError(f"unrecognized surrogate file {path}")


def load_samples(path) -> tuple[str, list[QualitySample]]:
    """Read a sample CSV: '# kind: <metric>' line, then cbr,snr_db,quality_db rows."""
    samples = []
    kind = "ws_psnr"
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first.startswith("#"):
            kind = first.split(":", 1)[1].strip() if ":" in first else kind
            header = fh.readline().strip()
        else:
            header = first
        if header != "cbr,snr_db,quality_db":
            raise ValueError(f"unexpected sample header {header!r}")
        for lineno, row in enumerate(csv.reader(fh), start=3):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"line {lineno}: expected 3 fields")
            samples.append(QualitySample(float(row[0]), float(row[1]), float(row[2])))
    if kind not in METRIC_KINDS:
        raise ValueError(f"unknown metric kind {kind!r}")
    return kind, samples


def save_samples(kind: str, samples: list[QualitySample], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# kind: {kind}\n")
        fh.write("cbr,snr_db,quality_db\n")
        writer = csv.writer(fh)
        for s in samples:
            writer.writerow([repr(s.cbr), repr(s.snr_db), repr(s.quality_db)])

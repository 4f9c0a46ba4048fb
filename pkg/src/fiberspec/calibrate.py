"""Self-calibration of the spool dispersion from filter-edge time widths.

Every calibration point is a band (lam1, lam2) whose arrival times spread
over ``delta_tau``. The prediction

    width = kappa/8 * [(lam2^2 - lam1^2) + lam0^4 (1/lam2^2 - 1/lam1^2)]

depends on length and slope only through kappa = L*S0, so the fit is done in
(kappa, lam0). For fixed lam0 the model is linear in kappa, which leaves a
one-dimensional profile chi^2 over lam0: scanned on a grid, then refined.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import textio
from .dispersion import DispersionModel, WavelengthBand, width_from_kappa
from .errors import FitError, FormatError, ValidationError

DEFAULT_SIGMA_PS = 180.0
_SCAN_POINTS = 4001
_PIN_RANGES = {"length": (1e-3, 500.0), "s0": (1e-4, 1.0)}
_PIN_ALIASES = {"length": "length", "length_km": "length", "s0": "s0", "s0_ps_nm2_km": "s0"}


class InsufficientDataError(ValidationError):
    pass


@dataclass(frozen=True)
class CalibrationPoint:
    band: WavelengthBand
    delta_tau: float
    sigma: float = DEFAULT_SIGMA_PS
    provenance: str = ""

    def __post_init__(self):
        if not self.delta_tau > 0:
            raise ValidationError(f"delta_tau must be positive, got {self.delta_tau}")
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")


@dataclass
class FitResult:
    kappa: float  # ps/nm^2
    lambda0: float  # nm
    covariance: np.ndarray  # over (kappa, lambda0[, derived])
    chi2: float
    dof: int
    s0: float | None = None
    length: float | None = None
    pin: tuple | None = None
    points: list = field(default_factory=list)

    @property
    def kappa_err(self) -> float:
        return math.sqrt(self.covariance[0, 0])

    @property
    def lambda0_err(self) -> float:
        return math.sqrt(self.covariance[1, 1])

    @property
    def derived_err(self) -> float | None:
        return math.sqrt(self.covariance[2, 2]) if self.covariance.shape[0] == 3 else None

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    def predictions(self) -> np.ndarray:
        return np.array([predict_width(p.band, self.kappa, self.lambda0) for p in self.points])


def predict_width(band: WavelengthBand, kappa: float, lambda0: float) -> float:
    if band.lo <= lambda0:
        raise ValidationError(f"band ({band.lo}, {band.hi}) does not lie above lambda0 = {lambda0}")
    return width_from_kappa(band.lo, band.hi, kappa, lambda0)


def _normalise_pin(pin):
    if pin is None:
        return None
    if isinstance(pin, dict):
        if len(pin) != 1:
            raise ValidationError("pin exactly one of length or s0")
        pin = next(iter(pin.items()))
    name, value = pin
    if name not in _PIN_ALIASES:
        raise ValidationError(f"unknown pin {name!r}; use length (km) or s0 (ps/(nm^2 km))")
    name = _PIN_ALIASES[name]
    value = float(value)
    lo, hi = _PIN_RANGES[name]
    if not lo <= value <= hi:
        raise ValidationError(
            f"pinned {name} = {value} outside the plausible range [{lo}, {hi}]; check units")
    return name, value


class _Problem:
    def __init__(self, points):
        self.lo = np.array([p.band.lo for p in points])
        self.hi = np.array([p.band.hi for p in points])
        self.y = np.array([p.delta_tau for p in points])
        self.w = 1.0 / np.array([p.sigma for p in points]) ** 2
        self.a = (self.hi**2 - self.lo**2) / 8.0
        self.b = (1.0 / self.hi**2 - 1.0 / self.lo**2) / 8.0

    def basis(self, lam0):
        return self.a + lam0**4 * self.b

    def profile(self, lam0):
        """(kappa_hat, chi2) at fixed lambda0."""
        f = self.basis(lam0)
        kappa = np.sum(self.w * self.y * f) / np.sum(self.w * f * f)
        r = self.y - kappa * f
        return kappa, float(np.sum(self.w * r * r))

    def chi2(self, kappa, lam0):
        r = self.y - kappa * self.basis(lam0)
        return float(np.sum(self.w * r * r))

    def hessian(self, kappa, lam0):
        """Exact Hessian of chi^2 in (kappa, lambda0)."""
        f = self.basis(lam0)
        r = self.y - kappa * f
        j = np.column_stack([f, kappa * 4.0 * lam0**3 * self.b])
        jtwj = j.T @ (self.w[:, None] * j)
        d2 = np.array([
            [0.0, np.sum(self.w * r * 4.0 * lam0**3 * self.b)],
            [np.sum(self.w * r * 4.0 * lam0**3 * self.b),
             np.sum(self.w * r * kappa * 12.0 * lam0**2 * self.b)],
        ])
        return 2.0 * (jtwj - d2)


def fit(points, pin=None, lambda0_range=None) -> FitResult:
    """Weighted least-squares fit of (kappa, lambda0) to calibration points."""
    points = list(points)
    pin = _normalise_pin(pin)
    if len(points) < 3:
        raise InsufficientDataError(f"need at least 3 calibration points, got {len(points)}")
    mids = np.array([0.5 * (p.band.lo + p.band.hi) for p in points])
    if len({(p.band.lo, p.band.hi) for p in points}) == 1 or np.ptp(mids) < 1.0:
        raise InsufficientDataError(
            "calibration bands cover a single wavelength region; lambda0 is not identifiable")
    prob = _Problem(points)
    upper = float(prob.lo.min())
    lo_scan, hi_scan = lambda0_range or (0.5 * upper, upper * (1.0 - 1e-9))
    grid = np.linspace(lo_scan, hi_scan, _SCAN_POINTS)
    prof = np.array([prob.profile(l0)[1] for l0 in grid])
    k = int(np.argmin(prof))
    if k == 0 or k == grid.size - 1:
        raise FitError(
            f"profile chi^2 is minimal at the scan boundary (lambda0 = {grid[k]:.2f} nm); "
            "lambda0 is not constrained by these points")
    res = minimize_scalar(lambda l0: prob.profile(l0)[1], bracket=(grid[k - 1], grid[k], grid[k + 1]),
                          method="brent", options={"xtol": 1e-12, "maxiter": 500})
    if not res.success:
        raise FitError(f"lambda0 refinement did not converge: {res.message}")
    lam0 = float(res.x)
    kappa, chi2 = prob.profile(lam0)
    if kappa <= 0:
        raise FitError(f"fitted kappa = {kappa} is not positive")
    h = prob.hessian(kappa, lam0)
    try:
        cov = 2.0 * np.linalg.inv(h)
    except np.linalg.LinAlgError:
        raise FitError("singular Hessian at the optimum") from None
    cov = 0.5 * (cov + cov.T)
    fr = FitResult(kappa=float(kappa), lambda0=lam0, covariance=cov, chi2=chi2,
                   dof=len(points) - 2, points=points)
    if pin is not None:
        apply_pin(fr, pin)
    return fr


def apply_pin(fr: FitResult, pin) -> FitResult:
    name, value = _normalise_pin(pin)
    cov2 = fr.covariance[:2, :2]
    if name == "length":
        fr.length, fr.s0 = value, fr.kappa / value
        g = np.array([[1.0, 0.0], [0.0, 1.0], [1.0 / value, 0.0]])
    else:
        fr.s0, fr.length = value, fr.kappa / value
        g = np.array([[1.0, 0.0], [0.0, 1.0], [1.0 / value, 0.0]])
    fr.covariance = g @ cov2 @ g.T
    fr.pin = (name, value)
    return fr


def dispersion_from_fit(fr: FitResult, pin=None) -> DispersionModel:
    pin = _normalise_pin(pin) if pin is not None else fr.pin
    if pin is None:
        raise ValidationError("splitting kappa into length and s0 needs a pin")
    name, value = pin
    if name == "length":
        return DispersionModel(s0=fr.kappa / value, lambda0=fr.lambda0, length=value)
    return DispersionModel(s0=value, lambda0=fr.lambda0, length=fr.kappa / value)


# ---------------------------------------------------------------- file formats

def read_calibration_table(path) -> list:
    with open(path) as fh:
        lines = fh.readlines()
    points = []
    for n, line in enumerate(lines, start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        if len(parts) not in (3, 4, 5):
            raise FormatError(f"{path}:{n}: expected 'lambda1_nm lambda2_nm delta_tau_ps "
                              "[sigma_ps [label]]'")
        try:
            lo, hi, tau = (float(v) for v in parts[:3])
            sigma = float(parts[3]) if len(parts) > 3 else DEFAULT_SIGMA_PS
        except ValueError:
            raise FormatError(f"{path}:{n}: non-numeric field") from None
        label = parts[4] if len(parts) > 4 else ""
        points.append(CalibrationPoint(WavelengthBand(lo, hi), tau, sigma, label))
    return points


def format_calibration_rows(points) -> str:
    return "".join(f"{p.band.lo:.6f} {p.band.hi:.6f} {p.delta_tau:.3f} {p.sigma:.3f} "
                   f"{p.provenance or '-'}\n" for p in points)


def write_calibration_table(points, path, append=False) -> None:
    new = not append
    try:
        new = new or not open(path).read().strip()
    except OSError:
        new = True
    with open(path, "a" if append else "w") as fh:
        if new:
            fh.write("# lambda1_nm lambda2_nm delta_tau_ps sigma_ps label\n")
        fh.write(format_calibration_rows(points))


def write_fit(fr: FitResult, path) -> None:
    header = {
        "kappa_ps_nm2": fr.kappa,
        "kappa_err_ps_nm2": fr.kappa_err,
        "lambda0_nm": fr.lambda0,
        "lambda0_err_nm": fr.lambda0_err,
        "chi2": fr.chi2,
        "dof": fr.dof,
        "pin": list(fr.pin) if fr.pin else None,
        "s0_ps_nm2_km": fr.s0,
        "length_km": fr.length,
        "derived_err": fr.derived_err,
    }
    n = fr.covariance.shape[0]
    for i in range(n):
        for j in range(n):
            header[f"cov_{i}{j}"] = float(fr.covariance[i, j])
    rows = np.array([[p.band.lo, p.band.hi, p.delta_tau, p.sigma, pred]
                     for p, pred in zip(fr.points, fr.predictions())]).reshape(-1, 5)
    header["labels"] = [p.provenance for p in fr.points]
    textio.write(path, "fiberspec fit", header,
                 {"points lambda1_nm lambda2_nm delta_tau_ps sigma_ps predicted_ps": rows})


def read_fit(path) -> FitResult:
    header, sections = textio.read(path, "fiberspec fit")
    try:
        n = 3 if header.get("cov_22") is not None else 2
        cov = np.array([[header[f"cov_{i}{j}"] for j in range(n)] for i in range(n)])
        key = next(k for k in sections if k.startswith("points"))
        rows = textio.as_array(sections[key])
        labels = header.get("labels", [""] * len(rows))
        points = [CalibrationPoint(WavelengthBand(r[0], r[1]), r[2], r[3], lab)
                  for r, lab in zip(rows, labels)]
        pin = tuple(header["pin"]) if header.get("pin") else None
        return FitResult(kappa=header["kappa_ps_nm2"], lambda0=header["lambda0_nm"],
                         covariance=cov, chi2=header["chi2"], dof=header["dof"],
                         s0=header.get("s0_ps_nm2_km"), length=header.get("length_km"),
                         pin=pin, points=points)
    except (KeyError, StopIteration) as exc:
        raise FormatError(f"fit file incomplete: {exc}") from None

"""Build experiment instances from raw data files.

Two delimited-text schemas (both CSV with a header row):

* captions: ``id,positive,total`` — one caption per row; arm mean is the
  fraction of positive ratings, a Bernoulli arm.
* screens:  ``gene_id,z1,z2`` — two replicate Z-scores per gene; the model
  works with their average, which has variance 1/2.

The screen pipeline fits a discrete mixing law for the latent means on a
uniform grid over [-4, 4] by entropy-regularized maximum likelihood

    maximize  (1/N) sum_i ln sum_g w_g phi(zbar_i; x_g, 1/2)  +  lam * H(w)

over the probability simplex (phi the normal density, H Shannon entropy).
The objective is concave in w, so EM with an exact entropic M-step converges
to the global optimum; new instances are then drawn from the fitted law with
unit observation variance.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import lambertw

from .instance import ArmDistribution, BanditInstance, BERNOULLI, GAUSSIAN

GRID_LO, GRID_HI = -4.0, 4.0
FIT_VARIANCE = 0.5        # variance of an averaged Z-score pair
WEIGHT_TOL = 1e-9
_MIXTURE_FORMAT = "mixture/1"


# ---------------------------------------------------------------------------
# file loaders


def load_caption_contest(path, mu0=None, epsilon=None) -> BanditInstance:
    """CSV ``id,positive,total`` -> Bernoulli instance, one arm per row."""
    arms = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["id", "positive", "total"]:
            raise ValueError(f"{path}: expected header 'id,positive,total', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                pos = int(row[1])
                total = int(row[2])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer vote count") from exc
            if total < 1:
                raise ValueError(f"{path}:{lineno}: total must be >= 1, got {total}")
            if not 0 <= pos <= total:
                raise ValueError(f"{path}:{lineno}: positive={pos} outside [0, {total}]")
            arms.append(ArmDistribution(BERNOULLI, pos / total))
    if not arms:
        raise ValueError(f"{path}: no data rows")
    return BanditInstance(tuple(arms), label=Path(path).stem, mu0=mu0, epsilon=epsilon)


def load_screen_zscores(path) -> np.ndarray:
    """CSV ``gene_id,z1,z2`` -> averaged Z-score per gene."""
    vals = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["gene_id", "z1", "z2"]:
            raise ValueError(f"{path}: expected header 'gene_id,z1,z2', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                z1, z2 = float(row[1]), float(row[2])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric Z-score") from exc
            if not (math.isfinite(z1) and math.isfinite(z2)):
                raise ValueError(f"{path}:{lineno}: non-finite Z-score")
            vals.append(0.5 * (z1 + z2))
    if not vals:
        raise ValueError(f"{path}: no data rows")
    return np.array(vals)


# ---------------------------------------------------------------------------
# mixture fit


@dataclass(frozen=True)
class MixingDistribution:
    """Discrete law of the latent means on a uniform grid.

    ``nll`` is the achieved data term -(1/N) sum ln(mixture density); the
    regularized objective adds ``lam`` times the entropy.
    """

    grid: np.ndarray
    weights: np.ndarray
    lam: float
    nll: float
    history: np.ndarray | None = None   # per-iteration objective, if tracked

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if g.ndim != 1 or g.shape != w.shape:
            raise ValueError("grid and weights must be equal-length vectors")
        if not np.all(np.diff(g) > 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()}, not 1")

    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-(w * np.log(w)).sum())

    def objective(self) -> float:
        return -self.nll + self.lam * self.entropy()


def mixture_grid(grid_step: float) -> np.ndarray:
    """Uniform grid over [-4, 4]; the step must divide the span."""
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    span = GRID_HI - GRID_LO
    npts = span / grid_step
    if abs(npts - round(npts)) > 1e-9:
        raise ValueError(f"grid_step {grid_step} does not divide the span {span}")
    return np.linspace(GRID_LO, GRID_HI, int(round(npts)) + 1)


def _w_of_log(y: np.ndarray) -> np.ndarray:
    """omega solving omega + ln(omega) = y, elementwise (i.e. W(e^y))."""
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    small = y < -30.0
    big = y > 50.0
    mid = ~(small | big)
    out[small] = np.exp(y[small])          # omega ~ e^y when tiny
    out[mid] = lambertw(np.exp(y[mid])).real
    if big.any():
        yb = y[big]
        om = yb - np.log(yb)
        for _ in range(12):                 # contraction with rate ~1/omega
            om = yb - np.log(om)
        out[big] = om
    return out


def _entropic_weights(m: np.ndarray, lam: float) -> np.ndarray:
    """Exact maximizer of sum_g m_g ln w_g + lam H(w) on the simplex.

    Stationarity gives w_g = m_g / (lam * W((m_g/lam) e^{c/lam})) for a
    multiplier c fixed by the normalization; the total is monotone in c, so
    bisection pins it to machine precision.
    """
    logm = np.log(np.maximum(m, 1e-300))

    def total(c):
        return float((m / (lam * _w_of_log(logm - math.log(lam) + c / lam))).sum())

    lo = hi = 0.0
    if total(0.0) >= 1.0:
        hi = 1.0
        while total(hi) > 1.0:
            lo, hi = hi, hi * 2.0
    else:
        lo = -1.0
        while total(lo) < 1.0:
            lo, hi = lo * 2.0, lo
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if total(mid) >= 1.0:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    w = m / (lam * _w_of_log(logm - math.log(lam) + c / lam))
    return w / w.sum()


def fit_mixing_distribution(zscores, grid_step: float = 0.01, lam: float = 1e-4,
                            iterations: int = 2000,
                            track_history: bool = False) -> MixingDistribution:
    """Entropy-regularized grid MLE of the mixing law of averaged Z-scores.

    E-step/M-step iterations with the exact entropic M-step; lam = 0 reduces
    to classical EM (multiplicative weight updates).  Deterministic.
    """
    z = np.asarray(zscores, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("zscores must be a nonempty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("zscores must be finite")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    grid = mixture_grid(grid_step)
    # phi(z; x, 1/2) = exp(-(z-x)^2) / sqrt(pi)
    dens = np.exp(-np.square(z[:, None] - grid[None, :])) / math.sqrt(math.pi)
    w = np.full(grid.size, 1.0 / grid.size)
    hist = []

    def objective(w):
        p = dens @ w
        ent = -(w[w > 0] * np.log(w[w > 0])).sum()
        return float(np.log(p).mean() + lam * ent)

    if track_history:
        hist.append(objective(w))
    for _ in range(iterations):
        p = dens @ w
        m = w * (dens / p[:, None]).mean(axis=0)
        m /= m.sum()
        w = m if lam == 0.0 else _entropic_weights(m, lam)
        if track_history:
            hist.append(objective(w))
    nll = float(-np.log(dens @ w).mean())
    return MixingDistribution(grid, w, lam, nll,
                              np.array(hist) if track_history else None)


def synth_from_mixture(mix: MixingDistribution, n: int, rng,
                       mu0=None, epsilon=None) -> BanditInstance:
    """n unit-variance Gaussian arms with means drawn i.i.d. from the law."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    p = mix.weights / mix.weights.sum()
    means = gen.choice(mix.grid, size=n, p=p)
    arms = tuple(ArmDistribution(GAUSSIAN, float(mu), 1.0) for mu in means)
    return BanditInstance(arms, label=f"mixture-synth(n={n})", mu0=mu0,
                          epsilon=epsilon)


# ---------------------------------------------------------------------------
# mixture files


def save_mixture(mix: MixingDistribution, path) -> None:
    doc = {
        "format": _MIXTURE_FORMAT,
        "grid": mix.grid.tolist(),
        "weights": mix.weights.tolist(),
        "lam": mix.lam,
        "nll": mix.nll,
    }
    Path(path).write_text(json.dumps(doc))


def load_mixture(path) -> MixingDistribution:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or doc.get("format") != _MIXTURE_FORMAT:
        raise ValueError(f"{path}: expected format tag {_MIXTURE_FORMAT!r}")
    return MixingDistribution(np.array(doc["grid"]), np.array(doc["weights"]),
                              float(doc["lam"]), float(doc["nll"]))

"""Synthetic designs, noise laws, sparse truths, and dataset I/O.

Designs are bounded, mean-zero, and sub-Gaussian with known envelope ``m_x``
and a smallest population eigenvalue ``rho_x`` available in closed form (or
from the exact covariance for the correlated variant).  All randomness flows
through per-purpose substreams of a single seed so that regeneration from
``(specs, seed)`` is bit-identical and independent of evaluation order.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .losses import ModelSpec, link_eval

__all__ = [
    "DesignSpec",
    "NoiseSpec",
    "Dataset",
    "substream",
    "derive_seed",
    "gen_design",
    "rho_x_of",
    "gen_theta0",
    "gen_response",
    "make_dataset",
    "save_dataset",
    "load_dataset",
]

_MASK64 = (1 << 64) - 1


def _tag_entropy(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    # crc32 is stable across platforms and python versions
    return zlib.crc32(str(tag).encode("utf-8"))


def substream(seed: int, *tags) -> np.random.Generator:
    """Generator for a named substream of ``seed``.

    Distinct tag tuples give independent streams, so design entries, noise
    draws, and probe directions never share randomness.
    """
    entropy = [int(seed) & _MASK64] + [_tag_entropy(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(master_seed: int, *indices) -> int:
    """Fold (master seed, indices) into a single reproducible 64-bit seed."""
    ss = np.random.SeedSequence([int(master_seed) & _MASK64]
                                + [_tag_entropy(i) for i in indices])
    lo, hi = ss.generate_state(2, dtype=np.uint64)[:2]
    return int(lo ^ (hi << 1)) & _MASK64


@dataclass(frozen=True)
class DesignSpec:
    """Law of one covariate row.

    ``rademacher`` draws i.i.d. signs times ``scale``; ``uniform`` draws
    i.i.d. Uniform(-scale, scale).  With ``n_mix`` set, coordinates are a
    moving average of ``n_mix`` independent signs (rescaled so the entries
    stay in [-scale, scale]), giving a non-identity covariance whose smallest
    eigenvalue is computed from the exact covariance matrix.
    """

    d: int
    family: str = "rademacher"
    scale: float = 1.0
    n_mix: int | None = None

    def __post_init__(self):
        if self.family not in ("rademacher", "uniform"):
            raise ValueError(f"unknown design family {self.family!r}")
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("scale must be a positive finite real")
        if self.n_mix is not None:
            if self.family != "rademacher":
                raise ValueError("the correlated variant mixes sign designs only")
            if self.n_mix < 2:
                raise ValueError("n_mix must be at least 2")

    @property
    def m_x(self) -> float:
        """Almost-sure envelope of |X_ij| (the paper's design bound)."""
        return self.scale

    def covariance(self) -> np.ndarray:
        """Exact covariance matrix E[X X^T]."""
        if self.n_mix is None:
            if self.family == "rademacher":
                return self.scale**2 * np.eye(self.d)
            return (self.scale**2 / 3.0) * np.eye(self.d)
        w = self.n_mix
        # X_j = scale * mean of w consecutive signs; overlapping windows share
        # (w - |j-k|)+ signs, each contributing scale^2 / w^2.
        offsets = np.abs(np.subtract.outer(np.arange(self.d), np.arange(self.d)))
        return self.scale**2 * np.maximum(w - offsets, 0) / w**2


def rho_x_of(spec: DesignSpec) -> float:
    """Lower bound rho_x on the smallest eigenvalue of E[X X^T].

    Rademacher{s} -> s^2, Uniform{h} -> h^2/3; the correlated variant uses the
    smallest eigenvalue of its exact covariance.
    """
    if spec.n_mix is None:
        if spec.family == "rademacher":
            return spec.scale**2
        return spec.scale**2 / 3.0
    eigs = np.linalg.eigvalsh(spec.covariance())
    rho = float(eigs[0])
    if rho <= 0:
        raise ValueError("correlated design covariance is numerically singular")
    return rho


def gen_design(spec: DesignSpec, n: int, seed: int) -> np.ndarray:
    """Draw an (n, d) design matrix with i.i.d. rows; deterministic per seed."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = substream(seed, "design")
    if spec.family == "uniform":
        return rng.uniform(-spec.scale, spec.scale, size=(n, spec.d))
    if spec.n_mix is None:
        signs = rng.integers(0, 2, size=(n, spec.d), dtype=np.int8)
        return spec.scale * (2.0 * signs - 1.0)
    w = spec.n_mix
    signs = rng.integers(0, 2, size=(n, spec.d + w - 1), dtype=np.int8)
    z = 2.0 * signs - 1.0
    kernel = np.ones(w) / w
    out = np.empty((n, spec.d))
    for j in range(spec.d):
        out[:, j] = z[:, j:j + w] @ kernel
    return spec.scale * out


@dataclass(frozen=True)
class NoiseSpec:
    """Symmetric noise law for the robust (and nls) responses.

    All families are symmetric about 0 with density strictly positive and
    decreasing on the positive half-line (gaussian sd=0 is allowed only as a
    degenerate noiseless case for sanity datasets).
    """

    family: str = "gaussian"
    sd: float = 1.0        # gaussian
    scale: float = 1.0     # laplace / student
    dof: float = 3.0       # student
    sd2: float = 3.0       # contaminated gaussian, wide component
    mix: float = 0.1       # contaminated gaussian, wide fraction

    def __post_init__(self):
        if self.family not in ("gaussian", "laplace", "student", "contam"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.family == "gaussian":
            if not (np.isfinite(self.sd) and self.sd >= 0):
                raise ValueError("gaussian sd must be nonnegative")
        elif self.family in ("laplace", "student"):
            if not (np.isfinite(self.scale) and self.scale > 0):
                raise ValueError("scale must be positive")
            if self.family == "student" and not (np.isfinite(self.dof) and self.dof > 0):
                raise ValueError("student dof must be positive")
        else:
            if not (0.0 < self.mix < 1.0):
                raise ValueError("contamination fraction must lie in (0, 1)")
            if not (self.sd > 0 and self.sd2 > 0):
                raise ValueError("contaminated component sds must be positive")

    @classmethod
    def gaussian(cls, sd: float = 1.0) -> "NoiseSpec":
        return cls("gaussian", sd=sd)

    @classmethod
    def laplace(cls, scale: float = 1.0) -> "NoiseSpec":
        return cls("laplace", scale=scale)

    @classmethod
    def student(cls, dof: float = 3.0, scale: float = 1.0) -> "NoiseSpec":
        return cls("student", dof=dof, scale=scale)

    @classmethod
    def contam(cls, sd1: float = 1.0, sd2: float = 3.0, mix: float = 0.1) -> "NoiseSpec":
        return cls("contam", sd=sd1, sd2=sd2, mix=mix)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "gaussian":
            return rng.normal(0.0, 1.0, size=n) * self.sd
        if self.family == "laplace":
            return rng.laplace(0.0, self.scale, size=n)
        if self.family == "student":
            return self.scale * rng.standard_t(self.dof, size=n)
        wide = rng.random(n) < self.mix
        draws = rng.normal(0.0, 1.0, size=n)
        return draws * np.where(wide, self.sd2, self.sd)

    def density(self, e) -> np.ndarray:
        """Closed-form density, vectorized.  Undefined for gaussian sd=0."""
        e = np.asarray(e, dtype=np.float64)
        if self.family == "gaussian":
            if self.sd <= 0:
                raise ValueError("density undefined for degenerate gaussian sd=0")
            return np.exp(-0.5 * (e / self.sd) ** 2) / (self.sd * math.sqrt(2 * math.pi))
        if self.family == "laplace":
            return np.exp(-np.abs(e) / self.scale) / (2.0 * self.scale)
        if self.family == "student":
            nu, s = self.dof, self.scale
            c = math.gamma((nu + 1) / 2) / (math.sqrt(nu * math.pi) * math.gamma(nu / 2) * s)
            return c * (1.0 + (e / s) ** 2 / nu) ** (-(nu + 1) / 2)
        phi1 = np.exp(-0.5 * (e / self.sd) ** 2) / (self.sd * math.sqrt(2 * math.pi))
        phi2 = np.exp(-0.5 * (e / self.sd2) ** 2) / (self.sd2 * math.sqrt(2 * math.pi))
        return (1.0 - self.mix) * phi1 + self.mix * phi2


def gen_theta0(d: int, s0: int, magnitude: float, seed: int) -> np.ndarray:
    """Sparse truth: exactly s0 entries of +-magnitude on a uniform support."""
    if not (1 <= s0 <= d):
        raise ValueError("s0 must satisfy 1 <= s0 <= d")
    if not (np.isfinite(magnitude) and magnitude > 0):
        raise ValueError("magnitude must be positive")
    rng = substream(seed, "theta0")
    support = rng.choice(d, size=s0, replace=False)
    signs = 2.0 * rng.integers(0, 2, size=s0) - 1.0
    theta0 = np.zeros(d)
    theta0[support] = magnitude * signs
    return theta0


def gen_response(model: ModelSpec, x: np.ndarray, noise: NoiseSpec | None,
                 seed: int) -> np.ndarray:
    """Draw responses for the model given a design matrix.

    Robust: y = X theta0 + eps with eps from ``noise``.  Binary: Bernoulli
    with success probability link(X theta0); the noise spec is ignored.
    Nls: y = f(X theta0) + gaussian noise (the model requires Gaussianity,
    so a non-gaussian noise spec is rejected).
    """
    theta0 = model.require_theta0()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != theta0.size:
        raise ValueError("design matrix does not match theta0")
    index = x @ theta0
    rng = substream(seed, "response")
    if model.kind == "robust":
        if noise is None:
            raise ValueError("robust responses require a noise specification")
        return index + noise.sample(rng, x.shape[0])
    if model.kind == "binary":
        p, _ = link_eval(model.link, index)
        return (rng.random(x.shape[0]) < p).astype(np.float64)
    if noise is not None and noise.family != "gaussian":
        raise ValueError("nls responses require gaussian noise")
    sd = model.noise_sd if noise is None else noise.sd
    value, _ = link_eval(model.link, index)
    return value + sd * rng.normal(0.0, 1.0, size=x.shape[0])


@dataclass(frozen=True)
class Dataset:
    """Design matrix, responses, and the specs plus seed that generated them."""

    x: np.ndarray
    y: np.ndarray
    model: ModelSpec
    design: DesignSpec
    seed: int
    noise: NoiseSpec | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError("x must be (n, d) and y must be (n,)")
        if np.max(np.abs(x)) > self.design.m_x * (1 + 1e-12):
            raise ValueError("design entries exceed the declared envelope m_x")
        if self.model.kind == "binary" and not np.all((y == 0) | (y == 1)):
            raise ValueError("binary responses must lie in {0, 1}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


def make_dataset(model: ModelSpec, design: DesignSpec, noise: NoiseSpec | None,
                 n: int, seed: int) -> Dataset:
    """Generate a dataset; bit-identical for identical (specs, seed)."""
    if design.d != model.d:
        raise ValueError("design dimension does not match theta0")
    x = gen_design(design, n, seed)
    y = gen_response(model, x, noise, seed)
    return Dataset(x=x, y=y, model=model, design=design, seed=int(seed), noise=noise)


_HEADER_PREFIX = "# nclasso-dataset v1;"


def save_dataset(data: Dataset, path) -> None:
    """Write the columnar text format: header, then per-row `y,x1,...,xd`.

    Decimals carry 17 significant digits so float64 values round-trip exactly.
    """
    lines = [f"{_HEADER_PREFIX} n={data.n} d={data.d} "
             f"model={data.model.kind} seed={data.seed}"]
    for i in range(data.n):
        row = [data.y[i]] + list(data.x[i])
        lines.append(",".join(f"{v:.17g}" for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path, t0: float = 4.685, link: str | None = None,
                 noise_sd: float = 0.0) -> Dataset:
    """Read a dataset file; the truth theta0 is not stored so it loads as None.

    Model hyperparameters absent from the header (t0, link, noise_sd) can be
    supplied; links default to logistic for binary and tanh for nls.
    """
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(_HEADER_PREFIX):
            raise ValueError(f"{path}: not an nclasso dataset file")
        fields = dict(part.split("=") for part in
                      header[len(_HEADER_PREFIX):].strip().split(" "))
        n, d = int(fields["n"]), int(fields["d"])
        kind, seed = fields["model"], int(fields["seed"])
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.shape != (n, d + 1):
        raise ValueError(f"{path}: expected {n} rows of {d + 1} values")
    if link is None:
        link = "tanh" if kind == "nls" else "logistic"
    model = ModelSpec(kind, None, t0=t0, link=link, noise_sd=noise_sd)
    scale = float(np.max(np.abs(rows[:, 1:]))) or 1.0
    design = DesignSpec(d=d, family="rademacher", scale=scale)
    return Dataset(x=rows[:, 1:], y=rows[:, 0], model=model, design=design, seed=seed)

"""Loss functions, link functions, and empirical/true risk for the three models.

Three single-index estimation problems share the interface here:

* ``robust``  -- linear model with Tukey bisquare loss on the residual,
* ``binary``  -- Bernoulli response with squared error against a link in [0, 1],
* ``nls``     -- nonlinear least squares through a bounded link, Gaussian noise.

Every operation is a pure function of its arguments and vectorized over
sample axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelSpec",
    "LossConstants",
    "tukey_rho",
    "tukey_rho_deriv",
    "tukey_deriv_sup",
    "link_eval",
    "loss_constants",
    "loss_value",
    "loss_deriv",
    "empirical_risk",
    "empirical_risk_grad",
    "true_risk_oracle",
]

MODEL_KINDS = ("robust", "binary", "nls")
LINK_KINDS = ("logistic", "tanh")

# Classical 95%-efficiency cutoff for the Tukey bisquare.
DEFAULT_TUKEY_T0 = 4.685


@dataclass(frozen=True)
class ModelSpec:
    """Which estimation problem, its hyperparameters, and the true parameter.

    Parameters
    ----------
    kind : {"robust", "binary", "nls"}
    theta0 : ndarray or None
        True parameter vector.  ``None`` is allowed for fitting external data
        where the truth is unknown; generation and error reporting require it.
    t0 : float
        Tukey bisquare cutoff (robust only), must be positive.
    link : {"logistic", "tanh"}
        Link for binary/nls.  Binary requires logistic (the link must map
        into [0, 1] to be a conditional probability).
    noise_sd : float
        Gaussian noise standard deviation (nls only), nonnegative.
    """

    kind: str
    theta0: np.ndarray | None
    t0: float = DEFAULT_TUKEY_T0
    link: str = "logistic"
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.link not in LINK_KINDS:
            raise ValueError(f"unknown link {self.link!r}")
        if self.kind == "binary" and self.link != "logistic":
            raise ValueError("binary model requires the logistic link "
                             "(the link must map into [0, 1])")
        if not (np.isfinite(self.t0) and self.t0 > 0):
            raise ValueError("t0 must be a positive finite real")
        if not (np.isfinite(self.noise_sd) and self.noise_sd >= 0):
            raise ValueError("noise_sd must be a nonnegative finite real")
        if self.theta0 is not None:
            theta0 = np.asarray(self.theta0, dtype=np.float64)
            if theta0.ndim != 1 or theta0.size == 0:
                raise ValueError("theta0 must be a nonempty 1-d vector")
            if not np.all(np.isfinite(theta0)):
                raise ValueError("theta0 must be finite")
            if np.count_nonzero(theta0) == 0:
                raise ValueError("theta0 must have at least one nonzero entry")
            theta0 = theta0.copy()
            theta0.flags.writeable = False
            object.__setattr__(self, "theta0", theta0)

    @classmethod
    def robust(cls, theta0, t0: float = DEFAULT_TUKEY_T0) -> "ModelSpec":
        return cls("robust", theta0, t0=t0)

    @classmethod
    def binary(cls, theta0, link: str = "logistic") -> "ModelSpec":
        return cls("binary", theta0, link=link)

    @classmethod
    def nls(cls, theta0, link: str = "tanh", noise_sd: float = 0.0) -> "ModelSpec":
        return cls("nls", theta0, link=link, noise_sd=noise_sd)

    @property
    def d(self) -> int:
        if self.theta0 is None:
            raise ValueError("model has no theta0; dimension unknown")
        return self.theta0.size

    @property
    def s0(self) -> int:
        if self.theta0 is None:
            raise ValueError("model has no theta0; sparsity unknown")
        return int(np.count_nonzero(self.theta0))

    def require_theta0(self) -> np.ndarray:
        if self.theta0 is None:
            raise ValueError("operation requires a known theta0")
        return self.theta0


@dataclass(frozen=True)
class LossConstants:
    """Envelope constants of a model's loss and link.

    ``m_rho`` bounds |rho| and |rho'| (robust), ``m_sigma`` bounds the binary
    link derivative, ``m_f`` bounds |f| and f' (nls), and ``lipschitz_l`` is
    the Lipschitz constant of the loss in its first argument (for nls, of the
    bounded term (f(t) - f(t'))^2 of the decomposition).  Fields that do not
    apply to the model kind are ``None``.
    """

    m_rho: float | None
    m_sigma: float | None
    m_f: float | None
    lipschitz_l: float


def _check_finite(name, value):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def tukey_rho(t, t0: float):
    """Tukey bisquare loss: 1 - (1 - (t/t0)^2)^3 for |t| <= t0, else 1.

    Even, nondecreasing in |t|, with values in [0, 1].
    """
    if not (np.isfinite(t0) and t0 > 0):
        raise ValueError("t0 must be a positive finite real")
    t = _check_finite("t", t)
    # multiplications instead of np.power: this sits in the grid-oracle hot loop
    u2 = np.minimum(t * t * (1.0 / (t0 * t0)), 1.0)
    w = 1.0 - u2
    out = 1.0 - w * w * w
    return out if out.ndim else float(out)


def tukey_rho_deriv(t, t0: float):
    """Derivative of the Tukey bisquare: (6t/t0^2)(1 - (t/t0)^2)^2 on |t| <= t0.

    Odd, vanishing outside [-t0, t0], bounded by (96 / (25 sqrt 5)) / t0.
    """
    if not (np.isfinite(t0) and t0 > 0):
        raise ValueError("t0 must be a positive finite real")
    t = _check_finite("t", t)
    u2 = np.minimum(t * t * (1.0 / (t0 * t0)), 1.0)
    w = 1.0 - u2
    out = (6.0 / (t0 * t0)) * t * w * w
    return out if out.ndim else float(out)


def tukey_deriv_sup(t0: float) -> float:
    """Closed-form sup of |rho'|, attained at t = t0/sqrt(5)."""
    return (96.0 / (25.0 * math.sqrt(5.0))) / t0


def link_eval(kind: str, t):
    """Evaluate a link and its derivative.

    Returns ``(value, deriv)``.  Logistic maps to (0, 1) with derivative
    value*(1-value); tanh maps to (-1, 1) with derivative 1-value^2.  Both
    derivatives are strictly positive on any bounded interval.
    """
    t = _check_finite("t", t)
    if kind == "logistic":
        # Stable two-branch logistic.
        value = np.where(t >= 0, 1.0 / (1.0 + np.exp(-t)),
                         np.exp(np.minimum(t, 0.0)) / (1.0 + np.exp(np.minimum(t, 0.0))))
        deriv = value * (1.0 - value)
    elif kind == "tanh":
        value = np.tanh(t)
        deriv = 1.0 - value**2
    else:
        raise ValueError(f"unknown link {kind!r}")
    if value.ndim:
        return value, deriv
    return float(value), float(deriv)


def link_sup_deriv(kind: str) -> float:
    """sup over the real line of the link derivative."""
    if kind == "logistic":
        return 0.25
    if kind == "tanh":
        return 1.0
    raise ValueError(f"unknown link {kind!r}")


def link_sup_abs(kind: str) -> float:
    """sup over the real line of the link's absolute value."""
    return 1.0  # both links take values in (-1, 1)


def loss_constants(model: ModelSpec) -> LossConstants:
    """Envelope constants for the model, computed in closed form.

    Robust: m_rho = max(sup|rho|, sup|rho'|) = max(1, (96/(25 sqrt 5))/t0) and
    the usable Lipschitz constant of rho(y - t) in t is m_rho itself (the
    bound on |rho'|).  Binary: Lipschitz constant 3*m_sigma.  Nls: the bounded
    decomposition term is 4*m_f^2-Lipschitz.
    """
    if model.kind == "robust":
        m_rho = max(1.0, tukey_deriv_sup(model.t0))
        return LossConstants(m_rho=m_rho, m_sigma=None, m_f=None, lipschitz_l=m_rho)
    if model.kind == "binary":
        m_sigma = link_sup_deriv(model.link)
        return LossConstants(m_rho=None, m_sigma=m_sigma, m_f=None,
                             lipschitz_l=3.0 * m_sigma)
    m_f = max(link_sup_abs(model.link), link_sup_deriv(model.link))
    return LossConstants(m_rho=None, m_sigma=None, m_f=m_f, lipschitz_l=4.0 * m_f**2)


def _check_binary_y(y):
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("binary model requires responses in {0, 1}")
    return y


def loss_value(model: ModelSpec, t, y):
    """Per-sample loss l(t, y) at index value t and response y.

    Robust: rho(y - t).  Binary: (y - sigma(t))^2 with y in {0, 1}.
    Nls: (y - f(t))^2.
    """
    t = _check_finite("t", t)
    y = _check_finite("y", y)
    if model.kind == "robust":
        out = tukey_rho(y - t, model.t0)
        return out
    if model.kind == "binary":
        y = _check_binary_y(y)
    value, _ = link_eval(model.link, t)
    gap = y - value
    out = np.asarray(gap * gap)
    return out if out.ndim else float(out)


def loss_deriv(model: ModelSpec, t, y):
    """Derivative of the loss in its first argument, d l(t, y) / dt."""
    t = _check_finite("t", t)
    y = _check_finite("y", y)
    if model.kind == "robust":
        out = -tukey_rho_deriv(y - t, model.t0)
    else:
        if model.kind == "binary":
            y = _check_binary_y(y)
        value, deriv = link_eval(model.link, t)
        out = -2.0 * deriv * (y - value)
    out = np.asarray(out)
    return out if out.ndim else float(out)


def _as_xy(data):
    """Accept a Dataset or a bare (x, y) pair."""
    if hasattr(data, "x") and hasattr(data, "y"):
        return data.x, data.y
    x, y = data
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)


def empirical_risk(model: ModelSpec, data, theta) -> float:
    """Mean loss over the sample: (1/n) sum_i l(x_i . theta, y_i)."""
    x, y = _as_xy(data)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (x.shape[1],):
        raise ValueError(f"theta has shape {theta.shape}, expected ({x.shape[1]},)")
    t = x @ theta
    return float(np.mean(loss_value(model, t, y)))


def empirical_risk_grad(model: ModelSpec, data, theta) -> np.ndarray:
    """Analytic gradient of ``empirical_risk`` in theta."""
    x, y = _as_xy(data)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (x.shape[1],):
        raise ValueError(f"theta has shape {theta.shape}, expected ({x.shape[1]},)")
    t = x @ theta
    dl = loss_deriv(model, t, y)
    return (x.T @ dl) / x.shape[0]


def true_risk_oracle(model: ModelSpec, design, theta, mc_n: int, seed: int,
                     noise=None) -> tuple[float, float]:
    """Monte Carlo estimate of the population risk R(theta) with a fresh sample.

    Draws ``mc_n`` fresh (X, Y) pairs from the design/model laws and averages
    the loss.  Returns ``(estimate, std_error)``; reproducible given seed.
    The robust model needs the noise law; binary needs none; nls uses the
    model's Gaussian noise_sd.
    """
    # Imported here to keep the data-generation layer importable on its own.
    from .data import NoiseSpec, gen_design, gen_response

    if mc_n < 100:
        raise ValueError("mc_n must be at least 100")
    theta = np.asarray(theta, dtype=np.float64)
    theta0 = model.require_theta0()
    if theta.shape != theta0.shape:
        raise ValueError("theta must match the dimension of theta0")
    if model.kind == "robust" and noise is None:
        raise ValueError("robust true risk requires a noise specification")
    if model.kind == "nls" and noise is None:
        noise = NoiseSpec.gaussian(model.noise_sd)
    x = gen_design(design, mc_n, seed)
    y = gen_response(model, x, noise, seed)
    values = loss_value(model, x @ theta, y)
    est = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(mc_n))
    return est, se

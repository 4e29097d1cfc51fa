"""Plane-strain laminate homogenisation algebra in Voigt notation.

All 3x3 tensors act on Voigt strain/stress vectors ordered
(e11, e22, 2*e12), i.e. engineering shear in the third slot.  Scalar
routines operate on a single material point; the ``*_field`` variants
are vectorised over leading array axes and produce bitwise-identical
results to an element-by-element loop over the scalar routines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Densities are clamped away from zero so the homogenised tensor stays
# invertible; below this the material is treated as void for display.
THETA_MIN = 1e-3


class SingularLaminateError(ValueError):
    """Raised when a laminate tensor combination cannot be inverted."""


@dataclass(frozen=True)
class LameCoefficients:
    """Isotropic plane-strain material in Lame form."""

    lam: float
    mu: float

    @property
    def bulk_2d(self) -> float:
        return self.lam + self.mu


@dataclass(frozen=True)
class StressEigen:
    """Principal decomposition of a 2x2 symmetric stress."""

    value1: float
    value2: float
    vector1: np.ndarray
    vector2: np.ndarray


def lame_from_engineering(young: float, poisson: float) -> LameCoefficients:
    """Convert (E, nu) to Lame coefficients.

    Requires E > 0 and nu in (-1, 0.5); the incompressible limit is
    rejected because lam diverges.
    """
    if young <= 0.0:
        raise ValueError(f"Young modulus must be positive, got {young}")
    if not -1.0 < poisson < 0.5:
        raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {poisson}")
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    mu = young / (2.0 * (1.0 + poisson))
    return LameCoefficients(lam=lam, mu=mu)


def base_tensor(material: LameCoefficients) -> np.ndarray:
    """Stiffness of the solid phase as a 3x3 Voigt matrix."""
    lam, mu = material.lam, material.mu
    return np.array(
        [
            [2.0 * mu + lam, lam, 0.0],
            [lam, 2.0 * mu + lam, 0.0],
            [0.0, 0.0, mu],
        ]
    )


def hashin_shtrikman_tensor(material: LameCoefficients, theta_bar: float) -> np.ndarray:
    """Isotropic stiffness of the stiffest theta_bar-dense composite.

    Used as the mechanically neutral starting tensor of the optimiser.
    At theta_bar = 1 it reduces to the solid phase.
    """
    if not 0.0 < theta_bar <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {theta_bar}")
    lam, mu = material.lam, material.mu
    omt = 1.0 - theta_bar
    denom_mu = mu + lam + omt * (3.0 * mu + lam)
    mu_eff = theta_bar * mu * (mu + lam) / denom_mu
    lam_eff = (
        theta_bar
        * mu
        * (mu + lam)
        * (lam + 2.0 * omt * mu)
        / (denom_mu * (mu + omt * (mu + lam)))
    )
    return np.array(
        [
            [2.0 * mu_eff + lam_eff, lam_eff, 0.0],
            [lam_eff, 2.0 * mu_eff + lam_eff, 0.0],
            [0.0, 0.0, mu_eff],
        ]
    )


def eigen_2x2_symmetric(s11: float, s22: float, s12: float) -> StressEigen:
    """Eigen-decompose a 2x2 symmetric stress.

    Eigenvalues are ordered by decreasing magnitude, |value1| >= |value2|.
    Each eigenvector is normalised so its first nonzero component is
    positive; the zero matrix yields the canonical axes.
    """
    v1, v2, e1, e2 = _eigen_field(
        np.asarray([s11], dtype=float),
        np.asarray([s22], dtype=float),
        np.asarray([s12], dtype=float),
    )
    return StressEigen(
        value1=float(e1[0]),
        value2=float(e2[0]),
        vector1=v1[0].copy(),
        vector2=v2[0].copy(),
    )


def _eigen_field(s11, s22, s12):
    """Vectorised symmetric 2x2 eigen-decomposition.

    Returns (vec1 (n,2), vec2 (n,2), val1 (n,), val2 (n,)) under the
    same ordering and sign conventions as :func:`eigen_2x2_symmetric`.
    """
    s11 = np.asarray(s11, dtype=float)
    s22 = np.asarray(s22, dtype=float)
    s12 = np.asarray(s12, dtype=float)
    half_tr = 0.5 * (s11 + s22)
    half_diff = 0.5 * (s11 - s22)
    radius = np.hypot(half_diff, s12)
    hi = half_tr + radius  # algebraically largest
    lo = half_tr - radius

    # Eigenvector for the algebraically largest eigenvalue.  Of the two
    # cross-product forms pick the better conditioned one per element.
    ax = np.where(half_diff >= 0.0, hi - s22, s12)
    ay = np.where(half_diff >= 0.0, s12, hi - s11)
    norm = np.hypot(ax, ay)
    degenerate = norm == 0.0  # isotropic stress, any basis works
    ax = np.where(degenerate, 1.0, ax)
    ay = np.where(degenerate, 0.0, ay)
    norm = np.where(degenerate, 1.0, norm)
    ax /= norm
    ay /= norm

    # Reorder by magnitude.
    swap = np.abs(lo) > np.abs(hi)
    val1 = np.where(swap, lo, hi)
    val2 = np.where(swap, hi, lo)
    # vec(lo) is the 90 degree rotation of vec(hi).
    v1x = np.where(swap, -ay, ax)
    v1y = np.where(swap, ax, ay)
    v2x = -v1y
    v2y = v1x

    def _fix_sign(x, y):
        sign = np.where(x != 0.0, np.sign(x), np.sign(y))
        sign = np.where(sign == 0.0, 1.0, sign)
        return x * sign, y * sign

    v1x, v1y = _fix_sign(v1x, v1y)
    v2x, v2y = _fix_sign(v2x, v2y)
    vec1 = np.stack([v1x, v1y], axis=-1)
    vec2 = np.stack([v2x, v2y], axis=-1)
    return vec1, vec2, val1, val2


def laminate_proportions(value1: float, value2: float) -> tuple[float, float]:
    """Layer fractions of the rank-2 laminate from principal stresses.

    The fraction of layers normal to vector1 carries the complementary
    magnitude: m1 = |value2| / (|value1| + |value2|).  Zero stress is a
    free design point and splits evenly.
    """
    a1, a2 = abs(value1), abs(value2)
    total = a1 + a2
    if total == 0.0:
        return 0.5, 0.5
    return a2 / total, a1 / total


def _proportions_field(val1, val2):
    a1 = np.abs(val1)
    a2 = np.abs(val2)
    total = a1 + a2
    safe = np.where(total == 0.0, 1.0, total)
    m1 = np.where(total == 0.0, 0.5, a2 / safe)
    m2 = np.where(total == 0.0, 0.5, a1 / safe)
    return m1, m2


def laminate_phase_tensor(material: LameCoefficients, direction: np.ndarray) -> np.ndarray:
    """Stiffness defect tensor of a single layer direction.

    ``direction`` must be a unit 2-vector; the returned 3x3 Voigt matrix
    is symmetric positive semidefinite with a one-dimensional kernel.
    """
    direction = np.asarray(direction, dtype=float)
    if direction.shape != (2,):
        raise ValueError(f"direction must be a 2-vector, got shape {direction.shape}")
    nrm = float(np.hypot(direction[0], direction[1]))
    if abs(nrm - 1.0) > 1e-12:
        raise ValueError(f"direction must be unit length, |v| = {nrm}")
    return _phase_tensor_field(material, direction[None, :])[0]


def _phase_tensor_field(material: LameCoefficients, directions) -> np.ndarray:
    """Vectorised layer defect tensors, (n, 2) directions -> (n, 3, 3)."""
    lam, mu = material.lam, material.mu
    a = 2.0 * mu + lam
    c = (mu + lam) / (mu * a)
    v1 = np.asarray(directions, dtype=float)[..., 0]
    v2 = np.asarray(directions, dtype=float)[..., 1]
    p = a * v1 * v1 + lam * v2 * v2
    q = lam * v1 * v1 + a * v2 * v2
    s = 2.0 * mu * v1 * v2
    out = np.empty(v1.shape + (3, 3))
    out[..., 0, 0] = a - (a * a * v1 * v1 + lam * lam * v2 * v2) / mu + c * p * p
    out[..., 1, 1] = a - (lam * lam * v1 * v1 + a * a * v2 * v2) / mu + c * q * q
    out[..., 2, 2] = c * s * s
    out[..., 0, 1] = lam - lam * a / mu + c * p * q
    out[..., 0, 2] = -(mu + lam) / mu * s + c * p * s
    out[..., 1, 2] = -(mu + lam) / mu * s + c * q * s
    out[..., 1, 0] = out[..., 0, 1]
    out[..., 2, 0] = out[..., 0, 2]
    out[..., 2, 1] = out[..., 1, 2]
    return out


def adjugate_inverse_3x3(matrix: np.ndarray) -> np.ndarray:
    """Invert a symmetric 3x3 matrix via adjugate over determinant.

    Cofactors are computed once per off-diagonal pair so the result is
    exactly symmetric in floating point.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {matrix.shape}")
    return _adjugate_inverse_field(matrix[None])[0]


def _adjugate_inverse_field(matrices: np.ndarray) -> np.ndarray:
    m = np.asarray(matrices, dtype=float)
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    d, e = m[..., 1, 1], m[..., 1, 2]
    f = m[..., 2, 2]
    # Cofactors of the symmetric matrix [[a,b,c],[b,d,e],[c,e,f]].
    co00 = d * f - e * e
    co01 = c * e - b * f
    co02 = b * e - c * d
    co11 = a * f - c * c
    co12 = b * c - a * e
    co22 = a * d - b * b
    det = a * co00 + b * co01 + c * co02
    if np.any(det == 0.0) or not np.all(np.isfinite(det)):
        raise SingularLaminateError("3x3 matrix is singular, determinant is zero")
    inv = np.empty_like(m)
    inv[..., 0, 0] = co00
    inv[..., 0, 1] = inv[..., 1, 0] = co01
    inv[..., 0, 2] = inv[..., 2, 0] = co02
    inv[..., 1, 1] = co11
    inv[..., 1, 2] = inv[..., 2, 1] = co12
    inv[..., 2, 2] = co22
    inv /= det[..., None, None]
    return inv


def _regularised_combination(m1, m2, ac1, ac2):
    """Form m1*Ac1 + m2*Ac2 and shift it onto the invertible cone.

    The combination is structurally rank deficient (each layer tensor
    is rank one), so a small identity shift scaled by the trace is
    always applied.  A PSD input with positive trace is positive
    definite after the shift, so positivity of the trace is the
    invertibility test; a determinant check would be meaningless here
    because cofactor expansion of a nearly rank-one matrix cancels
    below roundoff.  Layer tensors of unit directions always carry
    trace 4*mu*(mu+lam)/(2*mu+lam) > 0, hence a non-positive or
    non-finite trace signals a zero or corrupted combination.
    """
    comb = m1[..., None, None] * ac1 + m2[..., None, None] * ac2
    trace = comb[..., 0, 0] + comb[..., 1, 1] + comb[..., 2, 2]
    if not np.all(np.isfinite(trace)) or np.any(trace <= 0.0):
        raise SingularLaminateError(
            "layer combination is not invertible after regularisation"
        )
    eps = 1e-10 * trace / 3.0
    return comb + eps[..., None, None] * np.eye(3)


def homogenised_tensor(
    theta: float,
    m1: float,
    m2: float,
    ac1: np.ndarray,
    ac2: np.ndarray,
    base: np.ndarray,
) -> np.ndarray:
    """Effective stiffness of the rank-2 laminate at density theta.

    Evaluates (base^-1 + (1-theta)/theta * K^-1)^-1 with K the
    regularised layer combination.  theta = 1 returns the solid tensor
    exactly since the correction vanishes.
    """
    if not THETA_MIN <= theta <= 1.0:
        raise ValueError(f"theta must lie in [{THETA_MIN}, 1], got {theta}")
    return _homogenised_field(
        np.asarray([theta], dtype=float),
        np.asarray([m1], dtype=float),
        np.asarray([m2], dtype=float),
        np.asarray(ac1, dtype=float)[None],
        np.asarray(ac2, dtype=float)[None],
        np.asarray(base, dtype=float),
    )[0]


def _homogenised_field(theta, m1, m2, ac1, ac2, base) -> np.ndarray:
    """Effective tensors via the resolvent form, vectorised.

    Composing the defining formula literally (invert, add, invert back)
    cancels catastrophically once the regularised kernel direction of
    the layer combination blows the intermediate inverse up to ~1e10 of
    the informative scale.  The algebraically identical resolvent form

        A* = A - A (A + K * theta/(1-theta))^-1 A

    keeps every inversion adjugate-based while the ill-conditioned
    factor only enters through a term that stays small wherever its
    conditioning degrades.  Accuracy is ~1e-14 relative for theta up to
    0.999 and degrades to ~1e-6 only inside the corner theta > 1 - 1e-9
    where the result is dominated by the identity regularisation of the
    layer combination (a modelling artefact, not load-bearing physics).
    """
    comb = _regularised_combination(m1, m2, ac1, ac2)
    solid = theta >= 1.0
    # Dummy finite weight at solid elements, overwritten below.
    weight_inv = theta / np.where(solid, 1.0, 1.0 - theta)
    resolvent = base + weight_inv[..., None, None] * comb
    inner = _adjugate_inverse_field(resolvent)
    correction = np.einsum("ab,...bc,cd->...ad", base, inner, base)
    out = base - 0.5 * (correction + np.swapaxes(correction, -1, -2))
    out[solid] = base
    return out


def optimal_theta(value1: float, value2: float, gamma: float, material: LameCoefficients) -> float:
    """Volume-trade-off optimal density for a principal stress pair."""
    return float(
        _optimal_theta_field(
            np.asarray([abs(value1) + abs(value2)]), gamma, material
        )[0]
    )


def _optimal_theta_field(eig_abs_sum, gamma: float, material: LameCoefficients):
    """Vectorised optimal density from |value1| + |value2| per element."""
    if gamma <= 0.0 or not np.isfinite(gamma):
        raise ValueError(f"gamma must be a positive finite number, got {gamma}")
    lam, mu = material.lam, material.mu
    scale = np.sqrt((2.0 * mu + lam) / (4.0 * mu * (mu + lam) * gamma))
    theta = np.minimum(1.0, scale * np.asarray(eig_abs_sum, dtype=float))
    return np.maximum(THETA_MIN, theta)


def penalise_theta(theta):
    """Push intermediate densities towards 0/1 with a cosine profile.

    Fixed points are 0, 1/2, and 1; the output is clamped at THETA_MIN
    so downstream tensors stay invertible.  Accepts scalars or arrays.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0.0) or np.any(theta > 1.0):
        raise ValueError("densities must lie in [0, 1]")
    out = np.maximum(THETA_MIN, 0.5 * (1.0 - np.cos(np.pi * theta)))
    if out.ndim == 0:
        return float(out)
    return out


def find_gamma_for_volume(
    eig_abs_sum: np.ndarray,
    material: LameCoefficients,
    target_volume: float,
    weights: np.ndarray,
    tolerance: float = 1e-6,
    max_bisections: int = 500,
) -> float:
    """Find the multiplier gamma whose optimal density meets the volume.

    ``weights`` are element areas (any positive scale); the weighted
    mean of the optimal density is matched to ``target_volume`` within
    ``tolerance`` by bisection on log gamma over [1e-9, 1e9].  The
    density is capped at 1, so if even gamma = 1e-9 cannot reach the
    target (every element already clipped) that endpoint is returned.
    """
    if not 0.0 < target_volume < 1.0:
        raise ValueError(f"target volume must lie in (0, 1), got {target_volume}")
    eig_abs_sum = np.asarray(eig_abs_sum, dtype=float)
    if not np.any(eig_abs_sum > 0.0):
        raise ValueError("all stresses vanish, volume target is unreachable")
    weights = np.asarray(weights, dtype=float)
    wsum = weights.sum()

    def mean_theta(gamma: float) -> float:
        theta = _optimal_theta_field(eig_abs_sum, gamma, material)
        return float(weights @ theta) / wsum

    log_lo, log_hi = np.log(1e-9), np.log(1e9)
    # mean_theta is non-increasing in gamma: if even the most material
    # hungry endpoint stays below the target, return it as best effort.
    if mean_theta(np.exp(log_lo)) <= target_volume:
        return float(np.exp(log_lo))
    if mean_theta(np.exp(log_hi)) >= target_volume:
        theta_hi = _optimal_theta_field(eig_abs_sum, np.exp(log_hi), material)
        if np.all(theta_hi[eig_abs_sum > 0.0] >= 1.0):
            # Stresses so large the cap binds everywhere: the design is
            # gamma independent, return the interval floor.
            return float(np.exp(log_lo))
        raise ValueError("volume map does not cross the target on the search interval")
    for _ in range(max_bisections):
        log_mid = 0.5 * (log_lo + log_hi)
        mean = mean_theta(np.exp(log_mid))
        if abs(mean - target_volume) <= tolerance:
            return float(np.exp(log_mid))
        if mean > target_volume:
            log_lo = log_mid
        else:
            log_hi = log_mid
    raise ValueError("volume bisection failed to converge")


def laminate_update(stress: np.ndarray, material: LameCoefficients):
    """Per-element laminate data from a Voigt stress field (n, 3).

    Returns (eig_abs_sum, m1, m2, ac1, ac2): the principal magnitude
    sums feeding the density update, the layer proportions, and the two
    layer defect tensors aligned with the principal directions.
    """
    stress = np.asarray(stress, dtype=float)
    if stress.ndim != 2 or stress.shape[1] != 3:
        raise ValueError(f"stress field must have shape (n, 3), got {stress.shape}")
    vec1, vec2, val1, val2 = _eigen_field(
        stress[:, 0], stress[:, 1], stress[:, 2]
    )
    m1, m2 = _proportions_field(val1, val2)
    ac1 = _phase_tensor_field(material, vec1)
    ac2 = _phase_tensor_field(material, vec2)
    return np.abs(val1) + np.abs(val2), m1, m2, ac1, ac2


def optimal_theta_field(
    eig_abs_sum: np.ndarray, gamma: float, material: LameCoefficients
) -> np.ndarray:
    """Vectorised :func:`optimal_theta` on precomputed magnitude sums."""
    return _optimal_theta_field(np.asarray(eig_abs_sum, dtype=float), gamma, material)


def homogenised_field(
    theta: np.ndarray,
    m1: np.ndarray,
    m2: np.ndarray,
    ac1: np.ndarray,
    ac2: np.ndarray,
    material: LameCoefficients,
) -> np.ndarray:
    """Vectorised :func:`homogenised_tensor` over per-element arrays."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < THETA_MIN) or np.any(theta > 1.0):
        raise ValueError(f"densities must lie in [{THETA_MIN}, 1]")
    return _homogenised_field(
        theta,
        np.asarray(m1, dtype=float),
        np.asarray(m2, dtype=float),
        np.asarray(ac1, dtype=float),
        np.asarray(ac2, dtype=float),
        base_tensor(material),
    )

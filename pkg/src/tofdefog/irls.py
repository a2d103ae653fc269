"""Coarse-to-fine robust estimation of the scattering component.

The estimator minimizes, over the scattering field x and per-patch
quadratic coefficients a_k,

    sum_i rho((x_i - xt_i)/sigma)            (data term, Tukey's rho)
    + g1 * sum_k ||U a_k - x_k||^2           (local quadratic prior)
    + g2 * ||F x - x||^2                     (global symmetrical prior)
    + g3 * ||grad x||^2                      (smoothness)

via iteratively reweighted least squares: each outer iteration solves the
weighted quadratic surrogate for x (a linear system), refits the patch
quadratics, and updates the weights from the current residuals with
Tukey's biweight.  Pixels whose weight collapses to zero are exactly the
object region, which is what makes the weight field double as a segmenter.

Two levels run in sequence: a coarse level whose data term and weights
live on whole patches (robust against large objects), then a fine level
with per-pixel residuals initialized from the coarse solution.

The gamma constants configured here are the surrogate-scaled ones (the
"primed" constants, gamma' = 2*sigma^2*gamma); the solver derives the
unscaled gammas for objective tracking once sigma is known.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .priors import (
    FlipOperator,
    PatchGrid,
    gradient_penalty,
    laplacian_diag,
    symmetry_penalty,
)
from .recon import ObjectMask


class SolverError(RuntimeError):
    """Linear solver failed to converge; carries the residual norm."""

    def __init__(self, message, residual_norm=None):
        super().__init__(message)
        self.residual_norm = residual_norm


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters of the robust estimator.

    gamma1..gamma3 are the surrogate-scaled penalty weights; c_coarse and
    c_fine are Tukey tuning constants for the patch-level and pixel-level
    data terms.  flip_row / excluded rows describe the mirror geometry of
    the camera-illuminator pair and are camera-specific.
    """

    gamma1: float
    gamma2: float
    gamma3: float
    c_coarse: float
    c_fine: float
    patch_grid: tuple = (4, 4)
    flip: FlipOperator = FlipOperator(flip_row=200, excluded_bottom_rows=24)
    max_outer_iters: int = 50
    convergence_tol: float = 1e-4
    linear_solver_tol: float = 1e-6
    mask_threshold: float = 0.5
    # Weight the patch fits by the current pixel weights (default) so both
    # alternation steps respond to the same outlier pattern; True fits the
    # quadratics unweighted, which minimizes the surrogate's patch term
    # exactly.
    plain_patch_fit: bool = False
    # Project the final field to >= 0 (physical for amplitude, not phase).
    clamp_nonnegative: bool = False

    def __post_init__(self):
        if min(self.gamma1, self.gamma2, self.gamma3) < 0:
            raise ValueError("gamma constants must be non-negative")
        if self.c_coarse <= 0 or self.c_fine <= 0:
            raise ValueError("Tukey tuning constants must be positive")
        if not (0 < self.mask_threshold < 1):
            raise ValueError("mask_threshold must lie in (0, 1)")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be positive")
        if self.convergence_tol <= 0 or self.linear_solver_tol <= 0:
            raise ValueError("tolerances must be positive")

    def grid_for(self, shape) -> PatchGrid:
        return PatchGrid(shape[0], shape[1], self.patch_grid[0], self.patch_grid[1])

    @classmethod
    def profile(cls, name: str, **overrides) -> "SolverConfig":
        try:
            base = PROFILES[name]
        except KeyError:
            raise ValueError(
                f"unknown profile {name!r}; available: {sorted(PROFILES)}"
            ) from None
        return replace(base, **overrides) if overrides else base

    @classmethod
    def from_json(cls, doc) -> "SolverConfig":
        """Build a config from a JSON document (dict or string).

        Field names mirror the dataclass; an optional "profile" key selects
        a base profile that the remaining keys override.
        """
        if isinstance(doc, str):
            doc = json.loads(doc)
        doc = dict(doc)
        base = doc.pop("profile", None)
        if "flip" in doc and isinstance(doc["flip"], dict):
            doc["flip"] = FlipOperator(**doc["flip"])
        if "patch_grid" in doc:
            doc["patch_grid"] = tuple(doc["patch_grid"])
        if base is not None:
            return cls.profile(base, **doc)
        return cls(**doc)


PROFILES = {
    # Kinect v2 at 16 MHz, 424x512: mirror about row 200, bottom 24 rows
    # carry no symmetry information.
    "amplitude-kinect16": SolverConfig(
        gamma1=0.1, gamma2=0.1, gamma3=10.0, c_coarse=4.0, c_fine=7.0,
        clamp_nonnegative=True,
    ),
    "phase-kinect16": SolverConfig(
        gamma1=0.01, gamma2=0.1, gamma3=50.0, c_coarse=2.0, c_fine=3.0,
    ),
}


@dataclass
class ScatteringField:
    """Estimated per-pixel scattering component for one domain."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scattering field must be finite")


@dataclass
class WeightField:
    """IRLS weights in [0, 1]; level records their native granularity."""

    weights: np.ndarray
    level: str = "pixel"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.level not in ("patch", "pixel"):
            raise ValueError("level must be 'patch' or 'pixel'")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("weights must lie in [0, 1]")


@dataclass
class IrlsState:
    """Solver state after one optimization level."""

    x: ScatteringField
    a: np.ndarray                 # (K, 6) patch coefficients, scaled basis
    w: WeightField
    sigma: float
    objective_history: list = field(default_factory=list)
    level: str = "coarse"
    cg_iterations: list = field(default_factory=list)

    @property
    def outer_iterations(self) -> int:
        return len(self.objective_history)


def tukey_rho(r, c: float):
    """Tukey's biweight loss: bounded at c^2/6 beyond the tuning constant."""
    if c <= 0:
        raise ValueError("tuning constant must be positive")
    r = np.asarray(r, dtype=np.float64)
    t = np.minimum((r / c) ** 2, 1.0)
    out = (c * c / 6.0) * (1.0 - (1.0 - t) ** 3)
    return out if out.ndim else float(out)


def tukey_weight(r, c: float):
    """IRLS weight rho'(r)/r for Tukey's loss: (1-(r/c)^2)^2, 0 beyond c.

    The closed form is the analytic limit of rho'(r)/r at r=0, so no
    division guard is needed.
    """
    if c <= 0:
        raise ValueError("tuning constant must be positive")
    r = np.asarray(r, dtype=np.float64)
    t = (r / c) ** 2
    out = np.where(t < 1.0, (1.0 - np.minimum(t, 1.0)) ** 2, 0.0)
    return out if out.ndim else float(out)


def mad_scale(residuals, floor: float = 0.0) -> float:
    """Median absolute deviation scale, median(|r|)/0.6745, floored.

    0.6745 makes the estimate consistent for Gaussian residuals.  The floor
    guards the degenerate all-zero case; callers tie it to the data scale.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.size == 0:
        raise ValueError("residual vector must be non-empty")
    return max(float(np.median(np.abs(residuals)) / 0.6745), floor)


def _scale_floor(x_tilde: np.ndarray) -> float:
    return 1e-6 * (float(np.max(np.abs(x_tilde))) + 1e-12)


def binarize_weights(w: WeightField, threshold: float) -> ObjectMask:
    """Low weight marks an outlier, i.e. an object pixel."""
    return ObjectMask(mask=w.weights < threshold)


class _Workspace:
    """Per-image operators shared by every solve: patch bases, flip, diagonals.

    The weight-independent part of the normal operator (identity, symmetry
    and smoothness penalties) is assembled once as a sparse matrix; the
    x-step system is then diag(w) + K with only the diagonal changing
    between outer iterations.
    """

    def __init__(self, shape, cfg: SolverConfig):
        self.shape = shape
        self.cfg = cfg
        self.grid = cfg.grid_for(shape)
        self.flip = cfg.flip
        self.fixed_diag = (
            cfg.gamma1
            + cfg.gamma2 * cfg.flip.normal_diag(shape)
            + cfg.gamma3 * laplacian_diag(shape)
        )
        self.fixed_op = self._build_fixed_operator()
        n = shape[0] * shape[1]
        self.max_cg_iters = int(math.ceil(10.0 * math.sqrt(n)))

    def _build_fixed_operator(self):
        from scipy import sparse

        rows, cols = self.shape
        n = rows * cols
        cfg = self.cfg
        ops = [cfg.gamma1 * sparse.identity(n, format="csr")]
        if cfg.gamma3 > 0:
            # forward differences along each axis
            def diff_matrix(m):
                return sparse.diags([-np.ones(m - 1), np.ones(m - 1)], [0, 1],
                                    shape=(m - 1, m), format="csr")

            dh = sparse.kron(sparse.identity(rows, format="csr"),
                             diff_matrix(cols), format="csr")
            dv = sparse.kron(diff_matrix(rows),
                             sparse.identity(cols, format="csr"), format="csr")
            ops.append(cfg.gamma3 * (dh.T @ dh + dv.T @ dv))
        if cfg.gamma2 > 0:
            part = self.flip.participating_rows(rows)
            r_idx = np.nonzero(part)[0]
            m_idx = self.flip.mirror(r_idx)
            pix = (r_idx[:, None] * cols + np.arange(cols)[None, :]).ravel()
            mir = (m_idx[:, None] * cols + np.arange(cols)[None, :]).ravel()
            data = np.concatenate([np.full(pix.size, -1.0), np.ones(mir.size)])
            rows_r = np.concatenate([np.arange(pix.size), np.arange(mir.size)])
            cols_r = np.concatenate([pix, mir])
            r = sparse.csr_matrix((data, (rows_r, cols_r)), shape=(pix.size, n))
            ops.append(cfg.gamma2 * (r.T @ r))
        out = ops[0]
        for op in ops[1:]:
            out = out + op
        return out.tocsr()

    def apply_system(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        out = self.fixed_op @ x.ravel()
        out = out.reshape(self.shape)
        out += w * x
        return out

    def system_diag(self, w: np.ndarray) -> np.ndarray:
        return w + self.fixed_diag


def _solve_system(ws: _Workspace, w, b, x0, tol):
    """Diagonally preconditioned conjugate gradients for the x-step.

    Stops when the residual (gradient) norm drops below tol times its
    initial value; warm starts from x0 so each outer iteration's solve
    only ever decreases the surrogate.
    """
    x = x0.copy()
    r = b - ws.apply_system(w, x)
    r0_norm = float(np.linalg.norm(r))
    if r0_norm == 0.0:
        return x, 0
    target = tol * r0_norm
    diag = ws.system_diag(w)
    diag = np.where(diag > 0, diag, 1.0)
    z = r / diag
    p = z.copy()
    rz = float(np.vdot(r, z).real)
    for it in range(1, ws.max_cg_iters + 1):
        ap = ws.apply_system(w, p)
        pap = float(np.vdot(p, ap).real)
        if pap <= 0:
            # numerically semi-definite direction: current iterate is as
            # good as this subspace gets
            return x, it
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        r_norm = float(np.linalg.norm(r))
        if r_norm <= target:
            return x, it
        z = r / diag
        rz_new = float(np.vdot(r, z).real)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"x-step did not converge in {ws.max_cg_iters} iterations "
        f"(residual norm {r_norm:.3e}, target {target:.3e})",
        residual_norm=r_norm,
    )


def solve_wls(x_tilde, w, a, cfg: SolverConfig, x0=None):
    """Minimize the weighted surrogate over x with patch coefficients fixed.

    `w` is a WeightField or a weight grid in [0, 1]; `a` holds per-patch
    quadratic coefficients over patch-local (u, v) coordinates, shape
    (K, 6).  Returns the solution grid.
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    weights = w.weights if isinstance(w, WeightField) else np.asarray(w, np.float64)
    if isinstance(w, WeightField) and w.level == "patch":
        raise ValueError("expand patch weights over pixels before solving")
    if weights.shape != x_tilde.shape:
        raise ValueError("weight grid shape does not match image")
    if np.any(weights < 0) or np.any(weights > 1):
        raise ValueError("weights must lie in [0, 1]")
    ws = _Workspace(x_tilde.shape, cfg)
    coeffs = np.asarray(a, dtype=np.float64)
    scaled = np.array(
        [ws.grid.bases[k].from_raw(coeffs[k]) for k in range(ws.grid.n_patches)]
    )
    q = ws.grid.surface_image(scaled)
    b = weights * x_tilde + cfg.gamma1 * q
    x0 = x_tilde.copy() if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    x, _ = _solve_system(ws, weights, b, x0, cfg.linear_solver_tol)
    return x


def _x_step(ws, x_tilde, w_pix, coeffs, x_prev):
    q = ws.grid.surface_image(coeffs)
    b = w_pix * x_tilde + ws.cfg.gamma1 * q
    return _solve_system(ws, w_pix, b, x_prev, ws.cfg.linear_solver_tol)


def _a_step(ws, x, w_pix):
    if ws.cfg.plain_patch_fit:
        return ws.grid.fit_all(x)
    # floor keeps the weighted fit defined when a whole patch is outlier
    return ws.grid.fit_all(x, weights=w_pix + 1e-9)


def _prior_terms(ws, x, coeffs):
    q = ws.grid.surface_image(coeffs)
    patch_term = float(np.sum((q - x) ** 2))
    sym = symmetry_penalty(x, ws.flip)
    grad = gradient_penalty(x)
    return patch_term, sym, grad


def _objective(ws, x, coeffs, data_rho_sum, sigma):
    """True robust objective with the unscaled gammas gamma'/(2 sigma^2)."""
    patch_term, sym, grad = _prior_terms(ws, x, coeffs)
    scale = 1.0 / (2.0 * sigma * sigma)
    cfg = ws.cfg
    return data_rho_sum + scale * (
        cfg.gamma1 * patch_term + cfg.gamma2 * sym + cfg.gamma3 * grad
    )


def _converged(history, tol):
    if len(history) < 2:
        return False
    prev, cur = history[-2], history[-1]
    # the absolute floor only matters in the degenerate perfect-fit case
    # where the objective is numerical dust; any real run sits at O(1)+
    # because the MAD scale normalizes the residuals against themselves
    return abs(cur - prev) < tol * max(abs(prev), 1e-12)


def run_coarse(x_tilde, cfg: SolverConfig) -> IrlsState:
    """Patch-level robust estimation (the coarse half of the pipeline).

    Data term and Tukey weights live on whole patches; the scale sigma is
    the MAD of the patch residual norms, computed at the first iteration
    and then frozen.
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    ws = _Workspace(x_tilde.shape, cfg)
    floor = _scale_floor(x_tilde)

    x = x_tilde.copy()
    w_pix = np.ones_like(x_tilde)
    coeffs = ws.grid.fit_all(x_tilde)
    sigma = None
    history: list[float] = []
    cg_iters: list[int] = []
    w_patch = np.ones(ws.grid.n_patches)

    for _ in range(cfg.max_outer_iters):
        x, n_cg = _x_step(ws, x_tilde, w_pix, coeffs, x)
        cg_iters.append(n_cg)
        coeffs = _a_step(ws, x, w_pix)
        norms = ws.grid.patch_norms(x - x_tilde)
        if sigma is None:
            sigma = mad_scale(norms, floor=floor)
        w_patch = tukey_weight(norms / sigma, cfg.c_coarse)
        w_pix = ws.grid.expand_patch_values(w_patch)
        history.append(
            _objective(ws, x, coeffs, float(np.sum(tukey_rho(norms / sigma, cfg.c_coarse))), sigma)
        )
        if _converged(history, cfg.convergence_tol):
            break

    return IrlsState(
        x=ScatteringField(values=x),
        a=coeffs,
        w=WeightField(weights=w_pix, level="patch"),
        sigma=sigma,
        objective_history=history,
        level="coarse",
        cg_iterations=cg_iters,
    )


def run_fine(x_tilde, init: IrlsState, cfg: SolverConfig) -> IrlsState:
    """Pixel-level robust estimation, initialized from the coarse output."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if init.x.values.shape != x_tilde.shape:
        raise ValueError("coarse state does not belong to this image")
    ws = _Workspace(x_tilde.shape, cfg)
    floor = _scale_floor(x_tilde)

    x = init.x.values.copy()
    w_pix = init.w.weights.copy()
    coeffs = init.a.copy()
    sigma = None
    history: list[float] = []
    cg_iters: list[int] = []

    for _ in range(cfg.max_outer_iters):
        x, n_cg = _x_step(ws, x_tilde, w_pix, coeffs, x)
        cg_iters.append(n_cg)
        coeffs = _a_step(ws, x, w_pix)
        r = x - x_tilde
        if sigma is None:
            sigma = mad_scale(r.ravel(), floor=floor)
        w_pix = tukey_weight(r / sigma, cfg.c_fine)
        history.append(
            _objective(ws, x, coeffs, float(np.sum(tukey_rho(r / sigma, cfg.c_fine))), sigma)
        )
        if _converged(history, cfg.convergence_tol):
            break

    return IrlsState(
        x=ScatteringField(values=x),
        a=coeffs,
        w=WeightField(weights=w_pix, level="pixel"),
        sigma=sigma,
        objective_history=history,
        level="fine",
        cg_iterations=cg_iters,
    )


def estimate_scattering(x_tilde, cfg: SolverConfig):
    """Full coarse-to-fine run for one domain.

    Returns (coarse_state, fine_state, field) where the field is the final
    scattering estimate, projected to >= 0 when the config asks for it
    (amplitude domain; projection happens only after the final iteration so
    each inner step stays an exact weighted least-squares solve).
    """
    coarse = run_coarse(x_tilde, cfg)
    fine = run_fine(x_tilde, coarse, cfg)
    values = fine.x.values
    if cfg.clamp_nonnegative:
        values = np.maximum(values, 0.0)
    return coarse, fine, ScatteringField(values=values)

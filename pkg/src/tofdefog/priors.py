"""Linear operators behind the scattering-field priors.

Three quadratic penalties are used by the robust estimator:

  * local quadratic prior: within each patch of a non-overlapping grid the
    field is a 6-coefficient quadratic surface a1*u^2 + a2*u*v + a3*v^2 +
    a4*u + a5*v + a6,
  * global symmetrical prior: the field mirrors about a fixed image row
    fixed by the camera/illuminator geometry,
  * smoothness: squared forward differences along both axes.

All operators here are pure and stateless; patch fits are independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class SingularFitError(RuntimeError):
    """Raised when a patch fit's normal equations are rank deficient."""


@dataclass(frozen=True)
class QuadraticBasis:
    """Design matrix of the 6-term quadratic over one patch.

    Pixel coordinates are patch-local (0-based row/col offsets).  The fit
    itself runs in coordinates centered and scaled to [-1, 1]; raw patch
    coordinates up to a few hundred pixels give normal equations with
    condition numbers around 1e10, while the scaled basis is benign.  The
    scaling is a pure reparameterization: `to_raw` maps scaled coefficients
    back to the patch-local (u, v) convention.
    """

    n_rows: int
    n_cols: int

    def __post_init__(self):
        if self.n_rows < 3 or self.n_cols < 3:
            raise ValueError("patch must be at least 3x3 pixels")

    @cached_property
    def coords(self):
        """Patch-local (u, v) pixel coordinates, each flattened row-major."""
        u, v = np.meshgrid(
            np.arange(self.n_rows, dtype=np.float64),
            np.arange(self.n_cols, dtype=np.float64),
            indexing="ij",
        )
        return u.ravel(), v.ravel()

    @cached_property
    def _scaling(self):
        u, v = self.coords
        cu, cv = u.mean(), v.mean()
        su = max(np.abs(u - cu).max(), 1.0)
        sv = max(np.abs(v - cv).max(), 1.0)
        return cu, cv, su, sv

    @cached_property
    def design(self) -> np.ndarray:
        """N x 6 design matrix in the scaled basis."""
        u, v = self.coords
        cu, cv, su, sv = self._scaling
        uu = (u - cu) / su
        vv = (v - cv) / sv
        return np.column_stack([uu * uu, uu * vv, vv * vv, uu, vv, np.ones_like(uu)])

    def fit(self, values: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Least-squares coefficients (scaled basis) for patch values.

        `values` is the patch as a vector or 2-D block; optional per-pixel
        weights must be non-negative.  Raises SingularFitError when the
        weighted normal equations lose rank (e.g. nearly all weights zero).
        """
        x = np.asarray(values, dtype=np.float64).ravel()
        if x.size != self.n_rows * self.n_cols:
            raise ValueError("patch value count does not match basis size")
        U = self.design
        if weights is None:
            m = U.T @ U
            rhs = U.T @ x
        else:
            w = np.asarray(weights, dtype=np.float64).ravel()
            if w.size != x.size:
                raise ValueError("weight count does not match patch size")
            if np.any(w < 0):
                raise ValueError("weights must be non-negative")
            m = U.T @ (w[:, None] * U)
            rhs = U.T @ (w * x)
        if np.linalg.cond(m) > 1e12:
            raise SingularFitError(
                "patch fit normal equations are rank deficient "
                f"(cond={np.linalg.cond(m):.3e})"
            )
        return np.linalg.solve(m, rhs)

    def surface(self, coeffs: np.ndarray) -> np.ndarray:
        """Evaluate the quadratic (scaled-basis coefficients) over the patch."""
        return (self.design @ np.asarray(coeffs, dtype=np.float64)).reshape(
            self.n_rows, self.n_cols
        )

    def to_raw(self, coeffs: np.ndarray) -> np.ndarray:
        """Scaled-basis coefficients -> coefficients over patch-local (u, v)."""
        a1, a2, a3, a4, a5, a6 = np.asarray(coeffs, dtype=np.float64)
        cu, cv, su, sv = self._scaling
        pu, pv = 1.0 / su, 1.0 / sv
        du, dv = -cu / su, -cv / sv
        return np.array(
            [
                a1 * pu * pu,
                a2 * pu * pv,
                a3 * pv * pv,
                2.0 * a1 * pu * du + a2 * pu * dv + a4 * pu,
                2.0 * a3 * pv * dv + a2 * pv * du + a5 * pv,
                a1 * du * du + a2 * du * dv + a3 * dv * dv + a4 * du + a5 * dv + a6,
            ]
        )

    def from_raw(self, raw: np.ndarray) -> np.ndarray:
        """Patch-local coefficients -> scaled basis (inverse of to_raw)."""
        r1, r2, r3, r4, r5, r6 = np.asarray(raw, dtype=np.float64)
        cu, cv, su, sv = self._scaling
        # substitute u = su*uu + cu, v = sv*vv + cv and collect terms
        return np.array(
            [
                r1 * su * su,
                r2 * su * sv,
                r3 * sv * sv,
                2.0 * r1 * su * cu + r2 * su * cv + r4 * su,
                2.0 * r3 * sv * cv + r2 * sv * cu + r5 * sv,
                r1 * cu * cu + r2 * cu * cv + r3 * cv * cv + r4 * cu + r5 * cv + r6,
            ]
        )


def fit_patch_quadratic(values, basis: QuadraticBasis, weights=None) -> np.ndarray:
    """Weighted least-squares quadratic fit, coefficients over patch (u, v)."""
    return basis.to_raw(basis.fit(values, weights))


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping tiling of a rows x cols image into patches.

    When the image dimensions are not divisible by the grid, trailing
    patches absorb the remainder so the tiling stays exact.
    """

    rows: int
    cols: int
    patch_rows: int
    patch_cols: int

    def __post_init__(self):
        if self.patch_rows < 1 or self.patch_cols < 1:
            raise ValueError("patch grid must be at least 1x1")
        if self.rows // self.patch_rows < 3 or self.cols // self.patch_cols < 3:
            raise ValueError("patches must be at least 3x3 pixels")

    @property
    def n_patches(self) -> int:
        return self.patch_rows * self.patch_cols

    @cached_property
    def slices(self) -> list[tuple[slice, slice]]:
        """Row/col slice per patch, row-major over the patch grid."""
        row_edges = [self.rows // self.patch_rows * i for i in range(self.patch_rows)]
        row_edges.append(self.rows)
        col_edges = [self.cols // self.patch_cols * j for j in range(self.patch_cols)]
        col_edges.append(self.cols)
        out = []
        for i in range(self.patch_rows):
            for j in range(self.patch_cols):
                out.append(
                    (
                        slice(row_edges[i], row_edges[i + 1]),
                        slice(col_edges[j], col_edges[j + 1]),
                    )
                )
        return out

    @cached_property
    def bases(self) -> list[QuadraticBasis]:
        cache: dict[tuple[int, int], QuadraticBasis] = {}
        out = []
        for rs, cs in self.slices:
            key = (rs.stop - rs.start, cs.stop - cs.start)
            if key not in cache:
                cache[key] = QuadraticBasis(*key)
            out.append(cache[key])
        return out

    def fit_all(self, image: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Per-patch quadratic fits (scaled basis), shape (K, 6)."""
        coeffs = np.empty((self.n_patches, 6))
        for k, (rs, cs) in enumerate(self.slices):
            w = None if weights is None else weights[rs, cs]
            coeffs[k] = self.bases[k].fit(image[rs, cs], w)
        return coeffs

    def surface_image(self, coeffs: np.ndarray) -> np.ndarray:
        """Assemble the per-patch quadratic surfaces into a full image."""
        out = np.empty((self.rows, self.cols))
        for k, (rs, cs) in enumerate(self.slices):
            out[rs, cs] = self.bases[k].surface(coeffs[k])
        return out

    def expand_patch_values(self, values: np.ndarray) -> np.ndarray:
        """Broadcast one value per patch over its pixels."""
        out = np.empty((self.rows, self.cols))
        for k, (rs, cs) in enumerate(self.slices):
            out[rs, cs] = values[k]
        return out

    def patch_norms(self, residual: np.ndarray) -> np.ndarray:
        """2-norm of a residual image restricted to each patch."""
        return np.array(
            [np.linalg.norm(residual[rs, cs]) for rs, cs in self.slices]
        )


@dataclass(frozen=True)
class FlipOperator:
    """Vertical mirror about a fixed row, with an excluded bottom band.

    A row participates in the symmetry penalty only when its mirror
    2*flip_row - r lies inside the image and neither the row nor its mirror
    falls in the excluded bottom band (those rows carry no symmetry
    information).  The participating set is closed under mirroring, which
    makes the flip an involution and keeps the penalty's normal operator
    expressible through the flip itself.
    """

    flip_row: int
    excluded_bottom_rows: int = 0

    def __post_init__(self):
        if self.flip_row < 0:
            raise ValueError("flip_row must be non-negative")
        if self.excluded_bottom_rows < 0:
            raise ValueError("excluded_bottom_rows must be non-negative")

    def mirror(self, r):
        return 2 * self.flip_row - r

    def participating_rows(self, rows: int) -> np.ndarray:
        """Row mask of pixels that contribute to the symmetry penalty."""
        if self.flip_row >= rows:
            raise ValueError("flip_row lies outside the image")
        r = np.arange(rows)
        m = self.mirror(r)
        first_excluded = rows - self.excluded_bottom_rows
        ok = (m >= 0) & (m < rows) & (r < first_excluded) & (m < first_excluded)
        return ok

    def apply(self, image: np.ndarray) -> np.ndarray:
        """Mirror participating rows about flip_row; others pass through."""
        part = self.participating_rows(image.shape[0])
        rows_in = np.nonzero(part)[0]
        out = image.copy()
        out[rows_in] = image[self.mirror(rows_in)]
        return out

    def residual(self, image: np.ndarray) -> np.ndarray:
        """Mirror-minus-identity residual; zero outside participating rows."""
        return self.apply(image) - image

    def normal_apply(self, image: np.ndarray) -> np.ndarray:
        """(F - I)^T (F - I) restricted to participating rows.

        Because the participating set is mirror-closed and the flip is an
        involution, the normal operator equals the residual operator applied
        twice.
        """
        return self.residual(self.residual(image))

    def normal_diag(self, shape) -> np.ndarray:
        """Diagonal of the symmetry normal operator."""
        rows, cols = shape
        part = self.participating_rows(rows)
        d = np.where(part, 2.0, 0.0)
        if 0 <= self.flip_row < rows:
            d[self.flip_row] = 0.0  # a row is its own mirror: zero residual
        return np.repeat(d[:, None], cols, axis=1)


def apply_flip(image: np.ndarray, op: FlipOperator) -> np.ndarray:
    """Functional form of FlipOperator.apply."""
    return op.apply(image)


def symmetry_penalty(image: np.ndarray, op: FlipOperator) -> float:
    """Sum of squared mirror residuals over the participating region."""
    res = op.residual(image)
    return float(np.sum(res * res))


def gradient_penalty(image: np.ndarray) -> float:
    """Sum of squared forward differences along both axes."""
    dh = np.diff(image, axis=1)
    dv = np.diff(image, axis=0)
    return float(np.sum(dh * dh) + np.sum(dv * dv))


def laplacian_apply(image: np.ndarray) -> np.ndarray:
    """Normal operator of the forward-difference gradient (5-point stencil)."""
    out = np.zeros_like(image)
    dh = np.diff(image, axis=1)
    out[:, :-1] -= dh
    out[:, 1:] += dh
    dv = np.diff(image, axis=0)
    out[:-1, :] -= dv
    out[1:, :] += dv
    return out


def laplacian_diag(shape) -> np.ndarray:
    """Diagonal of the gradient normal operator."""
    rows, cols = shape
    d = np.zeros((rows, cols))
    d[:, :-1] += 1.0
    d[:, 1:] += 1.0
    d[:-1, :] += 1.0
    d[1:, :] += 1.0
    return d

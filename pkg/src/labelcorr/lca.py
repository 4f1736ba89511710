"""Label correction: Chan-Vese with an affine-registered shape prior.

Three binary fields are optimised jointly on one image tile:

* ``phi`` - the foreground/background segmentation,
* ``L``   - the pixels of interest (PoI) the corrected label may occupy,
* ``psi`` - the target shape, i.e. the prior mask moved by an affine map.

The energy is the Chan-Vese color term plus ``lam * sum (H(phi)H(L) - H(psi))**2``.
The corrected label is ``H(phi) * H(L)``. Sign fields (+1/-1) stand in for the
level sets throughout; only the prior keeps a smooth profile, because the
affine gradients need its spatial derivatives.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage, signal

from .chanvese import EnergyTrace
from .grid import as_levelset, heaviside, prepare_image, region_means, sign_field, sq_residual

PARAM_NAMES = ("tr_x", "tr_y", "s", "theta", "sh_x", "sh_y")
MIN_SCALE = 0.05


@dataclass(frozen=True)
class AffineParams:
    tr_x: float = 0.0
    tr_y: float = 0.0
    s: float = 1.0
    theta: float = 0.0
    sh_x: float = 0.0
    sh_y: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("affine parameters must be finite")
        if self.s <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls()

    @classmethod
    def from_array(cls, arr) -> "AffineParams":
        return cls(*(float(v) for v in arr))

    def as_array(self) -> np.ndarray:
        return np.array([self.tr_x, self.tr_y, self.s, self.theta, self.sh_x, self.sh_y])

    def to_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, map(float, self.as_array())))


@dataclass(frozen=True)
class LcaOptions:
    """Tuning knobs for :func:`lca_run`.

    ``lam`` is the shape-term weight; ``"auto"`` re-derives it every iteration
    as half the squared distance between the current region means, so the shape
    term can veto ambiguous pixels but never overrules clearly colored ones.
    Step sizes follow ``PARAM_NAMES`` order and apply to gradients normalised
    by ``lam`` and by the number of mismatched pixels. A run stops once the
    energy is unchanged and the parameters have settled, or after ``patience``
    consecutive unchanged energies.

    A run is rejected as a false annotation when the corrected mask is empty,
    covers less than ``reject_overlap_min`` of the warped prior, separates two
    colors closer than ``min_contrast``, or is more than ``max_area_ratio``
    times the prior's area (the segmentation captured the background instead
    of a thin feature).
    """
    lam: float | str = "auto"
    max_iters: int = 300
    energy_tol: float = 0.0
    affine_step_sizes: tuple = (0.5, 0.5, 0.005, 0.01, 0.005, 0.005)
    reject_overlap_min: float = 0.2
    min_contrast: float = 0.15
    max_area_ratio: float = 3.0
    shape_blur_sigma: float = 1.5
    heaviside_eps: float = 0.25
    search_radius: int = 12
    param_tol: float = 1e-3
    patience: int = 8
    color_mode: str = "multichannel"
    phi_rule: str = "midpoint"

    def __post_init__(self):
        if not (self.lam == "auto" or (isinstance(self.lam, (int, float)) and self.lam >= 0)):
            raise ValueError("lam must be 'auto' or a non-negative number")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if len(self.affine_step_sizes) != 6 or min(self.affine_step_sizes) <= 0:
            raise ValueError("need six positive affine step sizes")
        if not 0 <= self.reject_overlap_min <= 1:
            raise ValueError("reject_overlap_min must lie in [0, 1]")
        if self.max_area_ratio <= 0:
            raise ValueError("max_area_ratio must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.color_mode not in ("multichannel", "luminance"):
            raise ValueError(f"unknown color_mode {self.color_mode!r}")
        if self.phi_rule not in ("midpoint", "current"):
            raise ValueError(f"unknown phi_rule {self.phi_rule!r}")


@dataclass
class CorrectionResult:
    corrected_mask: np.ndarray
    final_affine: AffineParams
    trace: EnergyTrace
    verdict: str                    # accepted | rejected_false
    iterations: int = 0
    lam: float = 0.0
    overlap: float = 0.0
    contrast: float = 0.0
    flags: list = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.verdict == "accepted"


# -- smooth Heaviside used only for the affine gradients --------------------

def smooth_heaviside(z, eps: float):
    return 0.5 + np.arctan(np.asarray(z) / eps) / np.pi


def smooth_delta(z, eps: float):
    z = np.asarray(z)
    return (eps / np.pi) / (eps * eps + z * z)


# -- prior shape and its affine warp ----------------------------------------

def _bspline_weights(u):
    """Cubic B-spline weights and their derivatives for offsets -1..2."""
    v = 1.0 - u
    u2 = u * u
    v2 = v * v
    w0 = v2 * v / 6.0
    w3 = u2 * u / 6.0
    w1 = 2.0 / 3.0 - u2 + 0.5 * u2 * u
    w = (w0, w1, 1.0 - w0 - w1 - w3, w3)
    d0 = -0.5 * v2
    d3 = 0.5 * u2
    d1 = 1.5 * u2 - 2.0 * u
    d = (d0, d1, -d0 - d1 - d3, d3)
    return w, d


class PriorShape:
    """Cubic-spline view of a prior level set for sub-pixel warping.

    ``outside`` is the value read beyond the grid; ``None`` extends edge
    values instead, which suits priors clipped by a tile border.
    """

    def __init__(self, psi0, center=None, outside: float | None = -1.0, pad: int = 8):
        psi0 = np.asarray(psi0, dtype=float)
        if psi0.ndim != 2:
            raise ValueError("prior level set must be 2-D")
        self.psi0 = psi0
        self.shape = psi0.shape
        self.outside = outside
        self.pad = pad
        if outside is None:
            padded = np.pad(psi0, pad, mode="edge")
        else:
            padded = np.pad(psi0, pad, mode="constant", constant_values=outside)
        coef = ndimage.spline_filter(padded, order=3, mode="mirror")
        # two extra mirrored coefficients so every 4x4 stencil stays in range
        self._coef = np.pad(coef, 2, mode="reflect")
        self._lo = -pad
        self._hi = (psi0.shape[0] + pad - 1, psi0.shape[1] + pad - 1)
        if center is None:
            center = ((psi0.shape[1] - 1) / 2.0, (psi0.shape[0] - 1) / 2.0)
        self.center = (float(center[0]), float(center[1]))
        ys, xs = np.mgrid[0:psi0.shape[0], 0:psi0.shape[1]]
        self._xs = xs.astype(float)
        self._ys = ys.astype(float)

    def sample(self, x, y, derivatives: bool = False):
        """Values (and x/y partials) of the prior at points ``(x, y)``."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if self.outside is None:
            xc = np.clip(x, self._lo, self._hi[1])
            yc = np.clip(y, self._lo, self._hi[0])
            inside = (xc == x) & (yc == y)
        else:
            inside = (x >= self._lo) & (x <= self._hi[1]) & (y >= self._lo) & (y <= self._hi[0])
            xc = np.where(inside, x, 0.0)
            yc = np.where(inside, y, 0.0)
        val, gx, gy = self._eval(yc - self._lo, xc - self._lo, derivatives)
        if self.outside is not None:
            val = np.where(inside, val, self.outside)
        if not derivatives:
            return val
        return val, np.where(inside, gx, 0.0), np.where(inside, gy, 0.0)

    def _eval(self, r, c, derivatives):
        """Separable cubic B-spline evaluation at fractional (row, col) indices."""
        r0 = np.floor(r)
        c0 = np.floor(c)
        wr, dr = _bspline_weights(r - r0)
        wc, dc = _bspline_weights(c - c0)
        ncol = self._coef.shape[1]
        base = (r0.astype(np.intp) + 1) * ncol + c0.astype(np.intp) + 1  # pad 2, stencil -1
        flat = self._coef.ravel()
        val = np.zeros(r.shape)
        gx = np.zeros(r.shape) if derivatives else None
        gy = np.zeros(r.shape) if derivatives else None
        for i in range(4):
            row = [flat[base + (i * ncol + j)] for j in range(4)]
            v = wc[0] * row[0] + wc[1] * row[1] + wc[2] * row[2] + wc[3] * row[3]
            val += wr[i] * v
            if derivatives:
                gx += wr[i] * (dc[0] * row[0] + dc[1] * row[1] + dc[2] * row[2] + dc[3] * row[3])
                gy += dr[i] * v
        return val, gx, gy

    def warp(self, p: AffineParams, derivatives: bool = False):
        """Target shape ``psi = s * psi0(X + a, Y + b)`` on this grid.

        With ``derivatives`` also returns ``d psi / d p`` stacked as ``(6, H, W)``.
        """
        a, b = self.center
        dx = self._xs - a - p.tr_x
        dy = self._ys - b - p.tr_y
        ct, st = math.cos(p.theta), math.sin(p.theta)
        A = ct + p.sh_y * st
        B = st + p.sh_x * ct
        C = -st + p.sh_y * ct
        D = ct - p.sh_x * st
        X = (A * dx + B * dy) / p.s
        Y = (C * dx + D * dy) / p.s
        if not derivatives:
            return p.s * self.sample(X + a, Y + b)
        v, gx, gy = self.sample(X + a, Y + b, derivatives=True)
        jac = np.stack([
            -(A * gx + C * gy),
            -(B * gx + D * gy),
            v - (X * gx + Y * gy),
            p.s * (Y * gx - X * gy),
            dy * (gx * ct - gy * st),
            dx * (gx * st + gy * ct),
        ])
        return p.s * v, jac


def warp_shape(psi0, p: AffineParams, center, outside: float | None = -1.0) -> np.ndarray:
    """Move a prior level set by the affine map ``p`` about ``center`` (x, y)."""
    return PriorShape(psi0, center, outside=outside).warp(p)


def smooth_prior(prior_mask, sigma: float) -> np.ndarray:
    """Gaussian-blurred prior recentered to [-0.5, 0.5] (zero level near the mask edge)."""
    return ndimage.gaussian_filter(np.asarray(prior_mask, dtype=float), sigma, mode="nearest") - 0.5


def mask_centroid(mask) -> tuple[float, float]:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        h, w = np.shape(mask)
        return (w - 1) / 2.0, (h - 1) / 2.0
    return float(xs.mean()), float(ys.mean())


# -- energy and the per-field updates ----------------------------------------

def lca_energy(img, phi, L, psi, c1, c2, lam: float) -> float:
    u = prepare_image(img)
    hphi, hl, hpsi = heaviside(phi), heaviside(L), heaviside(psi)
    color = np.where(hphi, sq_residual(u, c1), sq_residual(u, c2))
    shape = (hphi & hl).astype(float) - hpsi
    return float(color.sum() + lam * np.sum(shape * shape))


def update_phi(img, phi, L, psi, c1, c2, lam: float, rule: str = "midpoint") -> np.ndarray:
    """Sign update of the segmentation.

    The force is ``(u-c1)^2 - (u-c2)^2 + 2 lam H(L) (h H(L) - H(psi))`` and the
    pixel becomes foreground where its negation is >= 0. ``rule="current"``
    evaluates ``h`` at the current ``H(phi)``; ``rule="midpoint"`` uses
    ``h = 1/2``, which turns the update into the exact per-pixel minimiser
    of the energy and so never raises it.
    """
    u = prepare_image(img)
    hl = heaviside(L).astype(float)
    hpsi = heaviside(psi).astype(float)
    if rule == "current":
        h = heaviside(phi).astype(float)
    elif rule == "midpoint":
        h = 0.5
    else:
        raise ValueError(f"unknown rule {rule!r}")
    force = sq_residual(u, c1) - sq_residual(u, c2) + 2.0 * lam * hl * (h * hl - hpsi)
    return np.where(-force >= 0, 1.0, -1.0)


def update_poi(phi, L, psi, L_init, lam: float = 1.0) -> np.ndarray:
    """PoI sign update, confined to the initial PoI support.

    Inside the initial support ``L`` becomes +1 where
    ``H(phi) (H(phi)H(L) - H(psi)) >= 0``; outside it stays -1.
    """
    hphi = heaviside(phi).astype(float)
    hl = heaviside(L).astype(float)
    hpsi = heaviside(psi).astype(float)
    rule = hphi * (hphi * hl - hpsi) >= 0
    return np.where(heaviside(L_init) & rule, 1.0, -1.0)


def _as_shape(psi0, center, outside) -> PriorShape:
    return psi0 if isinstance(psi0, PriorShape) else PriorShape(psi0, center, outside=outside)


def shape_energy(phi, L, psi0, p: AffineParams, center=None, lam: float = 1.0,
                 eps: float = 0.1, outside: float | None = None) -> float:
    """Smoothed shape term ``lam * sum (H(phi)H(L) - H_eps(psi(p)))^2``."""
    shape = _as_shape(psi0, center, outside)
    target = (heaviside(phi) & heaviside(L)).astype(float)
    r = target - smooth_heaviside(shape.warp(p), eps)
    return float(lam * np.sum(r * r))


def affine_gradients(phi, L, psi0, p: AffineParams, center=None, lam: float = 1.0,
                     eps: float = 0.1, outside: float | None = None) -> np.ndarray:
    """Gradient of :func:`shape_energy` w.r.t. ``(tr_x, tr_y, s, theta, sh_x, sh_y)``."""
    shape = _as_shape(psi0, center, outside)
    target = heaviside(phi) & heaviside(L)
    psi, jac = shape.warp(p, derivatives=True)
    return _gradient_from_warp(target, psi, jac, lam, eps)


def threshold_shape(phi, L, candidate) -> np.ndarray:
    """``psi = +1`` where ``H(phi)H(L) - H(candidate) >= 0`` inside the candidate's support."""
    target = heaviside(phi) & heaviside(L)
    support = heaviside(candidate)
    keep = (target.astype(float) - support) >= 0
    return np.where(support & keep, 1.0, -1.0)


def _gradient_from_warp(target, psi, jac, lam, eps):
    r = target.astype(float) - smooth_heaviside(psi, eps)
    w = -2.0 * lam * r * smooth_delta(psi, eps)
    return np.einsum("hw,khw->k", w, jac)


def _affine_step(p: AffineParams, grad, n_mismatch: int, opts: LcaOptions, lam: float,
                 step_scale: float):
    flags = []
    arr = p.as_array()
    if lam > 0:
        norm = lam * max(n_mismatch, 1)
        arr = arr - step_scale * np.asarray(opts.affine_step_sizes) * grad / norm
    if arr[2] <= MIN_SCALE:
        arr[2] = MIN_SCALE
        flags.append("scale_clamped")
    return AffineParams.from_array(arr), flags


def update_shape(phi, L, psi, shape: PriorShape, p: AffineParams, opts: LcaOptions,
                 lam: float, step_scale: float = 1.0):
    """Gradient step on the affine parameters, then re-threshold the moved prior.

    Returns ``(psi, params, flags)``.
    """
    target = heaviside(phi) & heaviside(L)
    current, jac = shape.warp(p, derivatives=True)
    grad = _gradient_from_warp(target, current, jac, lam, opts.heaviside_eps)
    n_mismatch = int((target != heaviside(current)).sum())
    new_p, flags = _affine_step(p, grad, n_mismatch, opts, lam, step_scale)
    return threshold_shape(phi, L, shape.warp(new_p)), new_p, flags


def translation_search(target, support, radius: int):
    """Integer shift ``(dx, dy)`` maximising ``|target & shift(support)|``.

    Ties prefer the shortest shift, then smaller ``dy``, then smaller ``dx``.
    """
    if radius <= 0 or not target.any() or not support.any():
        return 0, 0
    corr = signal.correlate(target.astype(float), support.astype(float), mode="full", method="fft")
    cy, cx = support.shape[0] - 1, support.shape[1] - 1
    best, best_key = (0, 0), None
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            iy, ix = cy + dy, cx + dx
            if not (0 <= iy < corr.shape[0] and 0 <= ix < corr.shape[1]):
                continue
            score = int(round(corr[iy, ix]))
            key = (-score, dx * dx + dy * dy, dy, dx)
            if best_key is None or key < best_key:
                best, best_key = (dx, dy), key
    return best


# -- the full loop -----------------------------------------------------------

def _contrast(c1, c2) -> float:
    return float(np.sqrt(np.sum((np.asarray(c1) - np.asarray(c2)) ** 2)))


def _auto_lam(means) -> float:
    return 0.5 * float(np.sum((means.c1 - means.c2) ** 2))


def lca_run(img, prior_shape, poi, opts: LcaOptions | None = None, check_invariants: bool = True,
            callback=None, init=None) -> CorrectionResult:
    """Correct one annotation on one tile.

    Parameters
    ----------
    img : array_like
        Tile image in [0, 1].
    prior_shape : array_like of bool
        Rasterized annotation (the shape prior).
    poi : array_like of bool
        Pixels of interest; the corrected label never leaves it.
    opts : LcaOptions, optional
    check_invariants : bool
        Assert the shrink invariants of ``L`` and ``psi`` every iteration.
    callback : callable, optional
        Called as ``callback(iteration, phi, L, psi, params)`` after each iteration.
    init : array_like, optional
        Initial segmentation level set (or boolean mask); defaults to the PoI.
    """
    opts = opts or LcaOptions()
    u = prepare_image(img, opts.color_mode)
    prior_shape = np.asarray(prior_shape, dtype=bool)
    poi = np.asarray(poi, dtype=bool)
    if prior_shape.shape != u.shape[:2] or poi.shape != u.shape[:2]:
        raise ValueError("image, prior and PoI must share dimensions")
    trace = EnergyTrace()
    empty = np.zeros(u.shape[:2], dtype=bool)
    if not poi.any() or not prior_shape.any():
        return CorrectionResult(empty, AffineParams.identity(), trace, "rejected_false",
                                flags=["empty_input"])
    if not np.all(poi[prior_shape]):
        warnings.warn("prior shape extends outside the PoI", stacklevel=2)

    L0 = sign_field(poi)
    L = L0.copy()
    if init is None:
        phi = sign_field(poi)
    else:
        init = np.asarray(init)
        phi = sign_field(init if init.dtype == bool else as_levelset(init) >= 0)
        if phi.shape != poi.shape:
            raise ValueError("init and image dimensions differ")
    shape = PriorShape(smooth_prior(prior_shape, opts.shape_blur_sigma),
                       mask_centroid(prior_shape), outside=None)
    p = AffineParams.identity()
    psi = sign_field(heaviside(shape.warp(p)))

    means = region_means(u, heaviside(phi))
    auto = opts.lam == "auto"
    lam = _auto_lam(means) if auto else float(opts.lam)
    flags = []
    energy = lca_energy(u, phi, L, psi, means.c1, means.c2, lam)
    trace.append(energy, means.c1, means.c2, int((heaviside(phi) & heaviside(L)).sum()))
    if means.degenerate:
        trace.degenerate = True

    iterations = 0
    flat = 0
    for it in range(opts.max_iters):
        iterations = it + 1
        phi = update_phi(u, phi, L, psi, means.c1, means.c2, lam, rule=opts.phi_rule)
        L = update_poi(phi, L, psi, L0, lam)
        target = heaviside(phi) & heaviside(L)
        if it == 0 and opts.search_radius > 0 and lam > 0:
            dx, dy = translation_search(target, heaviside(shape.warp(p)), opts.search_radius)
            if dx or dy:
                p = replace(p, tr_x=p.tr_x + dx, tr_y=p.tr_y + dy)
            psi = threshold_shape(phi, L, shape.warp(p))
        base = lca_energy(u, phi, L, psi, means.c1, means.c2, lam)
        current, jac = shape.warp(p, derivatives=True)
        grad = _gradient_from_warp(target, current, jac, lam, opts.heaviside_eps)
        n_mismatch = int((target != heaviside(current)).sum())
        kept = threshold_shape(phi, L, current)
        best_psi, best_p, best_w = kept, p, current
        best_e = lca_energy(u, phi, L, kept, means.c1, means.c2, lam)
        step = 1.0
        for _ in range(4):
            cand_p, f = _affine_step(p, grad, n_mismatch, opts, lam, step)
            cand_w = shape.warp(cand_p)
            cand_psi = threshold_shape(phi, L, cand_w)
            cand_e = lca_energy(u, phi, L, cand_psi, means.c1, means.c2, lam)
            # psi is clipped to target & support, so the hard energy never charges
            # for support overhanging the target; the support fit must not worsen
            if cand_e <= best_e and int((target != heaviside(cand_w)).sum()) <= n_mismatch:
                best_psi, best_p, best_e, best_w = cand_psi, cand_p, cand_e, cand_w
                flags.extend(x for x in f if x not in flags)
                break
            step *= 0.5
        moved = float(np.max(np.abs(best_p.as_array() - p.as_array())))
        psi, p, support = best_psi, best_p, heaviside(best_w)
        if best_e > base + 1e-9 * max(abs(base), 1.0):
            raise AssertionError("shape update raised the energy")

        if check_invariants:
            if np.any(heaviside(L) & ~heaviside(L0)):
                raise AssertionError("PoI grew beyond its initial support")
            if np.any(heaviside(psi) & ~support):
                raise AssertionError("target shape grew beyond the warped prior support")

        means = region_means(u, heaviside(phi))
        if means.degenerate:
            trace.degenerate = True
        if auto:
            lam = _auto_lam(means)
        energy = lca_energy(u, phi, L, psi, means.c1, means.c2, lam)
        prev = trace.records[-1].energy
        trace.append(energy, means.c1, means.c2, int((heaviside(phi) & heaviside(L)).sum()))
        if callback is not None:
            callback(it, phi, L, psi, p)
        flat = flat + 1 if abs(prev - energy) <= opts.energy_tol else 0
        # a flat energy with drifting parameters is a plateau of the hard shape term
        if flat and (moved <= opts.param_tol or flat >= opts.patience):
            break

    corrected = heaviside(phi) & heaviside(L)
    support = heaviside(shape.warp(p))   # p may have moved in the search alone
    overlap = float((corrected & support).sum() / support.sum()) if support.any() else 0.0
    contrast = _contrast(means.c1, means.c2)
    area_ratio = corrected.sum() / prior_shape.sum()
    reject = (not corrected.any() or overlap < opts.reject_overlap_min
              or contrast < opts.min_contrast or area_ratio > opts.max_area_ratio)
    if reject:
        corrected = empty
    return CorrectionResult(corrected, p, trace, "rejected_false" if reject else "accepted",
                            iterations=iterations, lam=lam, overlap=overlap,
                            contrast=contrast, flags=flags)

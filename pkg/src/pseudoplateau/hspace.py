"""The pseudo-hyperbolic space H^{2,n}: unit-timelike lines of the form.

Points are stored as q = -1 representatives; the sign quotient is resolved
per-context against a base vector. Alongside points and distances, this
module carries the analytic surfaces every numeric experiment is checked
against: totally geodesic disks and the flat orbit surfaces spanned by
photon quadrilaterals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qcore import (
    BilinearForm,
    DegenerateTripleError,
    GeometryError,
    _as_vector,
    consistent_lifts,
    subspace_signature,
)
from .einstein import BarbotCrown, BoundaryPoint, ChartDomainError, LipschitzLoop


class HorofunctionDomainError(GeometryError):
    pass


class FrameError(GeometryError):
    pass


@dataclass(frozen=True)
class HPoint:
    """A point of H^{2,n}, stored as a q = -1 representative."""

    rep: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rep", np.asarray(self.rep, dtype=float))

    def lift_toward(self, base) -> np.ndarray:
        """The lift with negative pairing against `base`."""
        b = _as_vector(base)
        val = float(np.dot(self.rep[:2], b[:2]) - np.dot(self.rep[2:], b[2:]))
        return self.rep if val < 0 else -self.rep


def hpoint(form: BilinearForm, raw, atol: float = 1e-10) -> HPoint:
    x = _as_vector(raw)
    qx = form.q(x)
    if abs(qx + 1.0) > atol:
        raise GeometryError(f"representative has q = {qx:.12f}, expected -1")
    return HPoint(x)


def normalize_hpoint(form: BilinearForm, raw) -> HPoint:
    """Scale a timelike vector onto the q = -1 sheet."""
    x = _as_vector(raw)
    qx = form.q(x)
    if qx >= 0:
        raise GeometryError("vector is not timelike")
    return HPoint(x / np.sqrt(-qx))


def spatial_distance(form: BilinearForm, x: HPoint, y: HPoint) -> float:
    """arccosh of the pairing on acausal pairs, zero otherwise. Pairings
    within rounding of 1 count as causal: arccosh amplifies noise there."""
    val = abs(form.inner(x.rep, y.rep))
    if val <= 1.0 + 1e-14:
        return 0.0
    return float(np.arccosh(val))


@dataclass(frozen=True)
class Horofunction:
    """log |<x, z0>| for a fixed nonzero isotropic z0, unit auxiliary norm."""

    z0: np.ndarray


def horofunction(form: BilinearForm, z, atol: float = 1e-8) -> Horofunction:
    z0 = _as_vector(z)
    nz = np.linalg.norm(z0)
    if nz == 0.0:
        raise GeometryError("horofunction vector must be nonzero")
    z0 = z0 / nz
    if abs(form.q(z0)) > atol:
        raise GeometryError("horofunction vector must be isotropic")
    return Horofunction(z0)


def horofunction_value(form: BilinearForm, h: Horofunction, x: HPoint, tol: float = 1e-12) -> float:
    val = abs(form.inner(x.rep, h.z0))
    if val <= tol:
        raise HorofunctionDomainError("point is orthogonal to the horofunction vector")
    return float(np.log(val))


def check_frame(form: BilinearForm, frame: np.ndarray, atol: float = 1e-8) -> np.ndarray:
    """Validate a q-orthonormal frame (rows); returns the row signs."""
    frame = np.asarray(frame, dtype=float)
    gram = (frame * form.signs) @ frame.T
    signs = np.diag(gram)
    if np.max(np.abs(np.abs(signs) - 1.0)) > atol:
        raise FrameError("frame vectors must have q = +1 or -1")
    off = gram - np.diag(signs)
    if np.max(np.abs(off)) > atol:
        raise FrameError("frame vectors must be q-orthogonal")
    return np.sign(signs)


def horofunction_gradient(form: BilinearForm, h: Horofunction, x: HPoint, frame: np.ndarray) -> np.ndarray:
    """Projection of z0 onto the span of the frame, divided by <x0, z0>,
    with the lift of x chosen so the pairing is positive."""
    signs = check_frame(form, frame)
    pairing = form.inner(x.rep, h.z0)
    if abs(pairing) <= 1e-12:
        raise HorofunctionDomainError("point is orthogonal to the horofunction vector")
    pairing = abs(pairing)
    coeffs = signs * ((frame * form.signs) @ h.z0)
    return (coeffs @ frame) / pairing


def gradient_norm_sq(form: BilinearForm, h: Horofunction, x: HPoint, frame: np.ndarray) -> float:
    g = horofunction_gradient(form, h, x, frame)
    return form.q(g)


# ---------------------------------------------------------------------------
# Barycenters and pointed planes


def ideal_barycenter(form: BilinearForm, triple) -> HPoint:
    """The center of the ideal triangle spanned by a positive triple: the
    normalised combination sum_i lambda_i u_i with the lambda weights chosen
    so all pairwise products agree."""
    reps = [_as_vector(t) for t in triple]
    if subspace_signature(form, reps).as_tuple() != (2, 1, 0):
        raise DegenerateTripleError("barycenter requires a positive triple")
    u = consistent_lifts(form, reps)
    p01 = abs(form.inner(u[0], u[1]))
    p02 = abs(form.inner(u[0], u[2]))
    p12 = abs(form.inner(u[1], u[2]))
    lam = np.array([
        np.sqrt(p12 / (p01 * p02)),
        np.sqrt(p02 / (p01 * p12)),
        np.sqrt(p01 / (p02 * p12)),
    ])
    v = lam @ u
    return normalize_hpoint(form, v)


def barycenter_weights(form: BilinearForm, triple) -> np.ndarray:
    reps = consistent_lifts(form, [_as_vector(t) for t in triple])
    p01 = abs(form.inner(reps[0], reps[1]))
    p02 = abs(form.inner(reps[0], reps[2]))
    p12 = abs(form.inner(reps[1], reps[2]))
    return np.array([
        np.sqrt(p12 / (p01 * p02)),
        np.sqrt(p02 / (p01 * p12)),
        np.sqrt(p01 / (p02 * p12)),
    ])


@dataclass(frozen=True)
class PointedPlane:
    """A totally geodesic hyperbolic plane with a marked point: the point,
    a spacelike orthonormal 2-frame spanning its tangent plane, and the
    negative-definite complement basis."""

    point: HPoint
    U: np.ndarray       # 2 x (n+3)
    W: np.ndarray       # n x (n+3)


def pointed_plane_from_triple(form: BilinearForm, triple) -> PointedPlane:
    q_pt = ideal_barycenter(form, triple)
    reps = consistent_lifts(form, [_as_vector(t) for t in triple])
    u1 = form.project_out(reps[0], [q_pt.rep])
    u1 = u1 / np.sqrt(form.q(u1))
    u2 = form.project_out(reps[1], [q_pt.rep, u1])
    u2 = u2 / np.sqrt(form.q(u2))
    U = np.vstack([u1, u2])
    W = _complement_basis(form, np.vstack([q_pt.rep, U]))
    return PointedPlane(q_pt, U, W)


def standard_pointed_plane(form: BilinearForm) -> PointedPlane:
    """The plane spanned by the first three coordinates, marked at e3."""
    d = form.dim
    point = HPoint(np.eye(d)[2])
    U = np.eye(d)[:2]
    W = np.eye(d)[3:]
    return PointedPlane(point, U, W)


def _complement_basis(form: BilinearForm, rows: np.ndarray) -> np.ndarray:
    A = rows * form.signs
    _, sv, vh = np.linalg.svd(A)
    rank = int(np.sum(sv > 1e-12 * max(sv[0], 1.0)))
    comp = vh[rank:]
    # q-orthonormalise the (negative definite) complement
    out = []
    for vec in comp:
        v = form.project_out(vec, out) if out else vec.copy()
        qv = form.q(v)
        if qv >= -1e-12:
            raise GeometryError("complement is not negative definite")
        out.append(v / np.sqrt(-qv))
    return np.array(out)


def radial_graph(form: BilinearForm, plane: PointedPlane, p: HPoint, w, atol: float = 1e-8) -> HPoint:
    """The point (p + w) / sqrt(1 - q(w)) for p on the plane and w in the
    negative-definite fiber direction; q = -1 holds identically."""
    wv = _as_vector(w)
    qw = form.q(wv)
    if qw > atol:
        raise GeometryError("fiber displacement must have q <= 0")
    for row in plane.W:
        if abs(form.inner(p.rep, row)) > atol:
            raise GeometryError("base point must lie on the plane")
    if abs(form.inner(wv, plane.point.rep)) > atol or np.max(np.abs((plane.U * form.signs) @ wv)) > atol:
        raise GeometryError("displacement must be q-orthogonal to the plane")
    return HPoint((p.rep + wv) / np.sqrt(1.0 - qw))


def radial_project(form: BilinearForm, plane: PointedPlane, x: HPoint, tol: float = 1e-10):
    """Invert the radial graph: split x into its plane component and fiber
    displacement; defined only where the plane component is timelike."""
    q0 = plane.point.rep
    c_t = -form.inner(x.rep, q0)
    c_u = (plane.U * form.signs) @ x.rep
    v = c_t * q0 + c_u @ plane.U
    qv = form.q(v)
    if qv >= -tol:
        raise ChartDomainError("plane component is not timelike; point is outside the radial chart")
    s = np.sqrt(-qv)
    wpart = (x.rep - v) / s
    p = HPoint(v / s)
    return p, wpart


# ---------------------------------------------------------------------------
# Analytic surfaces


def barbot_surface_point(crown: BarbotCrown, s: float, t: float) -> HPoint:
    """The orbit surface point e^s z0 + e^t z1 + e^-s z2 + e^-t z3."""
    z = crown.zreps
    return HPoint(np.exp(s) * z[0] + np.exp(t) * z[1] + np.exp(-s) * z[2] + np.exp(-t) * z[3])


def barbot_tangent_frame(crown: BarbotCrown, s: float, t: float) -> np.ndarray:
    """Orthonormal tangent frame sqrt(2) (dX/ds, dX/dt) at the orbit point."""
    z = crown.zreps
    xs = np.exp(s) * z[0] - np.exp(-s) * z[2]
    xt = np.exp(t) * z[1] - np.exp(-t) * z[3]
    return np.sqrt(2.0) * np.vstack([xs, xt])


def barbot_second_fundamental(crown: BarbotCrown, s: float, t: float):
    """Closed-form second fundamental form in the orthonormal frame above:
    returns (alpha, beta) = (II(e1, e1), II(e1, e2)); beta vanishes and
    II(e2, e2) = -alpha by maximality."""
    z = crown.zreps
    x = barbot_surface_point(crown, s, t).rep
    xss2 = 2.0 * (np.exp(s) * z[0] + np.exp(-s) * z[2])
    alpha = xss2 - x
    beta = np.zeros_like(x)
    return alpha, beta


def cylinder_point(form: BilinearForm, r: float, theta: float, fiber) -> HPoint:
    """The point sinh(r) (cos t, sin t, 0) + cosh(r) (0, 0, v); q = -1 for
    any unit fiber v, giving global polar-fiber coordinates on H^{2,n}."""
    f = _as_vector(fiber)
    vec = np.zeros(form.dim)
    vec[0] = np.sinh(r) * np.cos(theta)
    vec[1] = np.sinh(r) * np.sin(theta)
    vec[2:] = np.cosh(r) * f
    return HPoint(vec)


def cylinder_coords(form: BilinearForm, x: HPoint):
    """Inverse of cylinder_point: (r, theta, fiber)."""
    u = x.rep[:2]
    v = x.rep[2:]
    sr = np.linalg.norm(u)
    r = float(np.arcsinh(sr))
    theta = float(np.arctan2(u[1], u[0]) % (2.0 * np.pi)) if sr > 0 else 0.0
    return r, theta, v / np.linalg.norm(v)


def boundary_ray_point(loop: LipschitzLoop, theta: float, R: float) -> HPoint:
    """Finite-radius representative of the ideal loop point at angle theta:
    converges projectively to the loop point as R grows."""
    form = BilinearForm(loop.n)
    return cylinder_point(form, R, theta, loop.fiber_at(theta))


def geodesic_disk_point(form: BilinearForm, r: float, theta: float) -> HPoint:
    """Polar point of the standard totally geodesic plane."""
    f = np.zeros(form.dim - 2)
    f[0] = 1.0
    return cylinder_point(form, r, theta, f)


# ---------------------------------------------------------------------------
# Visual distance


def visual_distance(form: BilinearForm, triple, x: BoundaryPoint, y: BoundaryPoint) -> float:
    """Distance on the boundary in the Riemannian product metric of the
    splitting attached to the triple's barycenter plane."""
    plane = pointed_plane_from_triple(form, triple)
    basis = np.vstack([plane.U, plane.point.rep, plane.W])

    def split(p: BoundaryPoint):
        coords = (basis * form.signs) @ p.rep
        uu = coords[:2]
        vv = -coords[2:]
        return uu / np.linalg.norm(uu), vv / np.linalg.norm(vv)

    ux, vx = split(x)
    uy, vy = split(y)
    du = np.arccos(np.clip(np.dot(ux, uy), -1.0, 1.0))
    dv = np.arccos(np.clip(np.dot(vx, vy), -1.0, 1.0))
    dup = np.arccos(np.clip(-np.dot(ux, uy), -1.0, 1.0))
    dvp = np.arccos(np.clip(-np.dot(vx, vy), -1.0, 1.0))
    # distance on the double cover, minimised over the common lift
    return float(min(np.hypot(du, dv), np.hypot(dup, dvp)))

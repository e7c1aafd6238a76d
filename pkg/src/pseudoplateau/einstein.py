"""Boundary geometry of H^{2,n}: the projectivised null cone of the form.

Boundary points are stored on the double cover in product coordinates
(u, v) with u a unit vector of R^2 and v a unit vector of R^{n+1}; the
sign quotient is resolved by making the first nonzero coordinate of u
positive. Loops are sampled graphs of 1-Lipschitz maps from the circle to
the sphere, with geodesic interpolation between samples.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .qcore import (
    BilinearForm,
    DegenerateCrownError,
    DegenerateTripleError,
    GeometryError,
    standardize_triple,
    subspace_signature,
    _as_vector,
)


class NonTransverseError(GeometryError):
    pass


class CoincidentPointsError(GeometryError):
    pass


class ChartDomainError(GeometryError):
    pass


class InvalidLoopError(GeometryError):
    pass


TRANSVERSALITY_RTOL = 1e-8
ISOTROPY_ATOL = 1e-10


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of the Einstein quadric, normalised in product coordinates."""

    rep: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        rep = np.asarray(self.rep, dtype=float)
        if rep.ndim != 1 or rep.shape[0] < 3:
            raise GeometryError("boundary representative must be a vector in R^{n+3}")
        object.__setattr__(self, "rep", rep)
        object.__setattr__(self, "n", rep.shape[0] - 3)

    @property
    def u(self) -> np.ndarray:
        return self.rep[:2]

    @property
    def v(self) -> np.ndarray:
        return self.rep[2:]

    @property
    def theta(self) -> float:
        return float(np.arctan2(self.u[1], self.u[0]) % (2.0 * np.pi))


def boundary_point(form: BilinearForm, raw, atol: float = 1e-8) -> BoundaryPoint:
    """Normalise an isotropic vector into a BoundaryPoint; rejects vectors
    too far from the null cone."""
    x = _as_vector(raw)
    if x.shape[0] != form.dim:
        raise GeometryError(f"expected length {form.dim}, got {x.shape[0]}")
    nu = np.linalg.norm(x[:2])
    nv = np.linalg.norm(x[2:])
    if nu == 0.0 or nv == 0.0:
        raise GeometryError("vector is not isotropic (a product factor vanishes)")
    if abs(nu - nv) > atol * max(nu, nv):
        raise GeometryError(f"vector is not isotropic: |u| = {nu:.3e}, |v| = {nv:.3e}")
    rep = np.concatenate([x[:2] / nu, x[2:] / nv])
    u = rep[:2]
    lead = u[0] if u[0] != 0.0 else u[1]
    if lead < 0:
        rep = -rep
    return BoundaryPoint(rep)


def from_graph_sample(theta: float, fiber: np.ndarray) -> BoundaryPoint:
    """The boundary point of a loop-graph sample, keeping the graph lift."""
    rep = np.concatenate([[np.cos(theta), np.sin(theta)], fiber])
    u = rep[:2]
    lead = u[0] if u[0] != 0.0 else u[1]
    if lead < 0:
        rep = -rep
    return BoundaryPoint(rep)


def projectively_equal(a: BoundaryPoint, b: BoundaryPoint, atol: float = 1e-9) -> bool:
    return bool(
        np.max(np.abs(a.rep - b.rep)) <= atol or np.max(np.abs(a.rep + b.rep)) <= atol
    )


def transverse(form: BilinearForm, a: BoundaryPoint, b: BoundaryPoint, tol: float = TRANSVERSALITY_RTOL) -> bool:
    """Whether two boundary points pair nontrivially under the form (do not
    lie on a common photon)."""
    val = form.inner(a.rep, b.rep)
    return bool(abs(val) > tol * form.aux_norm(a.rep) * form.aux_norm(b.rep))


def triple_class(form: BilinearForm, a: BoundaryPoint, b: BoundaryPoint, c: BoundaryPoint,
                 tol: float = 1e-9) -> str:
    """Classify span(a, b, c): 'positive' for signature (2,1), 'negative'
    for (1,2), 'nonnegative_degenerate' otherwise."""
    if projectively_equal(a, b) or projectively_equal(a, c) or projectively_equal(b, c):
        raise CoincidentPointsError("triple contains coincident points")
    sig = subspace_signature(form, [a.rep, b.rep, c.rep], tol=tol).as_tuple()
    if sig == (2, 1, 0):
        return "positive"
    if sig == (1, 2, 0):
        return "negative"
    return "nonnegative_degenerate"


@dataclass(frozen=True)
class Photon:
    basis: np.ndarray  # 2 x (n+3), spanning an isotropic plane


def photon_through(form: BilinearForm, a: BoundaryPoint, b: BoundaryPoint) -> Photon:
    if transverse(form, a, b):
        raise NonTransverseError("points are transverse; no photon contains both")
    if projectively_equal(a, b):
        raise CoincidentPointsError("a photon needs two distinct points")
    basis = np.vstack([a.rep, b.rep])
    sig = subspace_signature(form, basis).as_tuple()
    if sig != (0, 0, 2):
        raise GeometryError(f"span is not an isotropic plane: signature {sig}")
    return Photon(basis)


@dataclass(frozen=True)
class SpacelikeCircle:
    """Boundary of a totally geodesic hyperbolic plane: basis rows are
    (b1, b2) spacelike orthonormal and b3 with q = -1."""

    basis: np.ndarray

    def point_at(self, theta: float) -> BoundaryPoint:
        rep = np.cos(theta) * self.basis[0] + np.sin(theta) * self.basis[1] + self.basis[2]
        u = rep[:2].copy()
        nu = np.linalg.norm(u)
        rep = np.concatenate([u / nu, rep[2:] / nu])
        lead = rep[0] if rep[0] != 0.0 else rep[1]
        if lead < 0:
            rep = -rep
        return BoundaryPoint(rep)


def standard_circle(form: BilinearForm) -> SpacelikeCircle:
    basis = np.zeros((3, form.dim))
    basis[0, 0] = 1.0
    basis[1, 1] = 1.0
    basis[2, 2] = 1.0
    return SpacelikeCircle(basis)


def circle_through_triple(form: BilinearForm, a: BoundaryPoint, b: BoundaryPoint, c: BoundaryPoint) -> SpacelikeCircle:
    if triple_class(form, a, b, c) != "positive":
        raise DegenerateTripleError("only a positive triple spans a spacelike circle")
    from .qcore import triple_frame

    frame = triple_frame(form, [a.rep, b.rep, c.rep])
    return SpacelikeCircle(frame)


# ---------------------------------------------------------------------------
# Minkowski charts


@dataclass(frozen=True)
class MinkowskiChart:
    """Conformal identification of the complement of a light cone with flat
    R^{1,n}. apply/inverse go through the canonical chart of (a0, b0) with an
    affine conformal adjustment (L, p) of the source."""

    a0: np.ndarray
    b0: np.ndarray
    fbasis: np.ndarray          # (n+1) x (n+3), q-orthonormal rows, signs (+,-,...,-)
    L: np.ndarray               # (n+1) x (n+1) conformal linear map
    p: np.ndarray               # translation in R^{1,n}

    @property
    def n(self) -> int:
        return self.fbasis.shape[0] - 1

    def q1n(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        return float(u[0] ** 2 - np.dot(u[1:], u[1:]))


def _q1n_signs(n: int) -> np.ndarray:
    s = -np.ones(n + 1)
    s[0] = 1.0
    return s


def _orthonormal_lorentz_basis(form: BilinearForm, span_rows: np.ndarray) -> np.ndarray:
    """q-orthonormalise a basis of a (1, n) subspace; first row spacelike."""
    gram = (span_rows * form.signs) @ span_rows.T
    w, vecs = np.linalg.eigh(gram)
    order = np.argsort(-w)
    w = w[order]
    vecs = vecs[:, order]
    if not (w[0] > 0 and np.all(w[1:] < 0)):
        raise GeometryError("subspace does not have signature (1, n)")
    rows = []
    for k in range(len(w)):
        vec = span_rows.T @ vecs[:, k] / np.sqrt(abs(w[k]))
        lead = vec[np.argmax(np.abs(vec))]
        if lead < 0:
            vec = -vec
        rows.append(vec)
    return np.array(rows)


def minkowski_chart(form: BilinearForm, a: BoundaryPoint, b: BoundaryPoint) -> MinkowskiChart:
    """The canonical chart of Mink(a) anchored at b (no affine adjustment)."""
    pairing = form.inner(a.rep, b.rep)
    if abs(pairing) < TRANSVERSALITY_RTOL * form.aux_norm(a.rep) * form.aux_norm(b.rep):
        raise NonTransverseError("chart anchor must be transverse to the cone point")
    a0 = a.rep
    b0 = b.rep / pairing
    QA = np.vstack([form.signs * a0, form.signs * b0])
    _, _, vh = np.linalg.svd(QA)
    span = vh[2:]
    fbasis = _orthonormal_lorentz_basis(form, span)
    n = form.dim - 3
    return MinkowskiChart(a0, b0, fbasis, np.eye(n + 1), np.zeros(n + 1))


def minkowski_chart_apply(form: BilinearForm, chart: MinkowskiChart, u) -> BoundaryPoint:
    """psi(u) = u - b0 + q(u)/2 a0, with u expanded in the chart basis after
    the affine adjustment."""
    u = np.asarray(u, dtype=float)
    w = chart.p + chart.L @ u
    vec = w @ chart.fbasis - chart.b0 + 0.5 * chart.q1n(w) * chart.a0
    return boundary_point(form, vec)


def minkowski_chart_inverse(form: BilinearForm, chart: MinkowskiChart, x: BoundaryPoint,
                            tol: float = TRANSVERSALITY_RTOL) -> np.ndarray:
    """Chart coordinates of a point off the light cone L(a)."""
    pairing = form.inner(x.rep, chart.a0)
    if abs(pairing) < tol * form.aux_norm(x.rep) * form.aux_norm(chart.a0):
        raise ChartDomainError("point lies on the light cone of the chart")
    x0 = x.rep / (-pairing)
    y = x0 + chart.b0
    y = y - form.inner(y, chart.b0) * chart.a0
    signs = _q1n_signs(chart.n)
    w = signs * ((chart.fbasis * form.signs) @ y)
    return np.linalg.solve(chart.L, w - chart.p)


_REFERENCE_CHART_CACHE: dict[int, MinkowskiChart] = {}


def _reference_tau_chart(form: BilinearForm) -> MinkowskiChart:
    """The chart of the reference triple (a at the cone point, b at -e1,
    c at +e1), built once per dimension."""
    if form.n in _REFERENCE_CHART_CACHE:
        return _REFERENCE_CHART_CACHE[form.n]
    from .qcore import reference_triple

    ref = reference_triple(form)
    a = boundary_point(form, ref[0])
    b = boundary_point(form, ref[1])
    c = boundary_point(form, ref[2])
    base = minkowski_chart(form, a, b)
    w = minkowski_chart_inverse(form, base, c)
    qw = base.q1n(w)
    if qw <= 0:
        raise GeometryError("reference chart corner is not spacelike")
    lam = np.sqrt(qw) / 2.0
    # conformal linear map sending e1 to w/2, completed by Gram-Schmidt
    signs = _q1n_signs(base.n)
    cols = [w / np.sqrt(qw)]
    for k in range(1, base.n + 1):
        cand = np.zeros(base.n + 1)
        cand[k] = 1.0
        for col in cols:
            cand -= (np.dot(signs * cand, col) / np.dot(signs * col, col)) * col
        nc = np.dot(signs * cand, cand)
        cand = cand / np.sqrt(abs(nc))
        cols.append(cand)
    R = np.column_stack(cols)
    L = lam * R
    p = w / 2.0
    chart = MinkowskiChart(base.a0, base.b0, base.fbasis, L, p)
    _REFERENCE_CHART_CACHE[form.n] = chart
    return chart


def tau_chart(form: BilinearForm, triple) -> MinkowskiChart:
    """The chart for a positive triple (a, b, c): a Minkowski chart for a
    sending (-1, 0, ..., 0) to b and (1, 0, ..., 0) to c. The O(n) ambiguity
    is resolved by the deterministic reference construction."""
    a, b, c = triple
    g = standardize_triple([a.rep, b.rep, c.rep], form)
    ref = _reference_tau_chart(form)
    ginv = np.linalg.inv(g.matrix)
    return MinkowskiChart(ginv @ ref.a0, ginv @ ref.b0, ref.fbasis @ ginv.T, ref.L, ref.p)


# ---------------------------------------------------------------------------
# Diamonds


@dataclass(frozen=True)
class Diamond:
    """A connected component of points forming a positive triple with a
    transverse pair, encoded by the defining triple and a side flag."""

    triple: tuple
    side: str  # "containing" or "avoiding" the third point


def in_closed_diamond(form: BilinearForm, triple, x: BoundaryPoint, tol: float = 1e-9) -> bool:
    """Membership of x in the closure of the diamond of (b, c) not containing
    a, tested in the tau-chart of (a, b, c) by first-coordinate ordering."""
    chart = tau_chart(form, triple)
    try:
        u = minkowski_chart_inverse(form, chart, x)
    except ChartDomainError:
        return False
    e1 = np.zeros(chart.n + 1)
    e1[0] = 1.0
    lo = u + e1
    hi = e1 - u
    return bool(
        chart.q1n(lo) >= -tol and lo[0] >= -tol and chart.q1n(hi) >= -tol and hi[0] >= -tol
    )


def diamond_distance(form: BilinearForm, triple, x: BoundaryPoint, y: BoundaryPoint,
                     tol: float = 1e-9) -> float:
    """Euclidean distance of the tau-chart preimages; defined on the diamond
    of (b, c) avoiding a."""
    chart = tau_chart(form, triple)
    if not in_closed_diamond(form, triple, x, tol=max(tol, 1e-7)):
        raise ChartDomainError("first point lies outside the diamond")
    if not in_closed_diamond(form, triple, y, tol=max(tol, 1e-7)):
        raise ChartDomainError("second point lies outside the diamond")
    ux = minkowski_chart_inverse(form, chart, x)
    uy = minkowski_chart_inverse(form, chart, y)
    return float(np.linalg.norm(ux - uy))


def quadruple_positive(form: BilinearForm, a: BoundaryPoint, b: BoundaryPoint,
                       c: BoundaryPoint, d: BoundaryPoint) -> bool:
    """Whether b and d sit in opposite diamonds of the pair (a, c), i.e. the
    quadruple is cyclically ordered; requires all sub-triples positive."""
    for t in ([a, b, c], [a, b, d], [a, c, d], [b, c, d]):
        if triple_class(form, *t) != "positive":
            raise DegenerateTripleError("quadruple has a non-positive sub-triple")
    chart = tau_chart(form, (a, b, c))
    ud = minkowski_chart_inverse(form, chart, d)
    e1 = np.zeros(chart.n + 1)
    e1[0] = 1.0
    rel = ud - e1
    return bool(chart.q1n(rel) > 0 and rel[0] > 0)


# ---------------------------------------------------------------------------
# Loops


def _sphere_dist(f: np.ndarray, g: np.ndarray) -> float:
    return float(np.arccos(np.clip(np.dot(f, g), -1.0, 1.0)))


def _circle_dist(a: float, b: float) -> float:
    d = abs(a - b) % (2.0 * np.pi)
    return min(d, 2.0 * np.pi - d)


def _slerp(f: np.ndarray, g: np.ndarray, t: float) -> np.ndarray:
    ang = _sphere_dist(f, g)
    if ang < 1e-12:
        out = (1.0 - t) * f + t * g
        return out / np.linalg.norm(out)
    return (np.sin((1.0 - t) * ang) * f + np.sin(t * ang) * g) / np.sin(ang)


@dataclass
class LipschitzLoop:
    """A semi-positive loop sampled as the graph of a 1-Lipschitz map from
    the circle to the fiber sphere."""

    thetas: np.ndarray
    fibers: np.ndarray
    c1: bool = False

    def __post_init__(self):
        thetas = np.asarray(self.thetas, dtype=float) % (2.0 * np.pi)
        fibers = np.asarray(self.fibers, dtype=float)
        order = np.argsort(thetas)
        thetas = thetas[order]
        fibers = fibers[order]
        keep = np.concatenate([[True], np.diff(thetas) > 1e-12])
        self.thetas = thetas[keep]
        self.fibers = fibers[keep]
        if len(self.thetas) < 3:
            raise InvalidLoopError("a loop needs at least three distinct samples")
        norms = np.linalg.norm(self.fibers, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-8:
            raise InvalidLoopError("fiber samples must lie on the unit sphere")

    @property
    def n(self) -> int:
        return self.fibers.shape[1] - 1

    @property
    def size(self) -> int:
        return len(self.thetas)

    @property
    def lipschitz_margin(self) -> float:
        """Minimum of circle-distance minus fiber-distance over consecutive
        sample pairs; positive for strictly contracting data."""
        k = self.size
        vals = []
        for i in range(k):
            j = (i + 1) % k
            vals.append(
                _circle_dist(self.thetas[i], self.thetas[j])
                - _sphere_dist(self.fibers[i], self.fibers[j])
            )
        return float(min(vals))

    def fiber_at(self, theta: float) -> np.ndarray:
        """Geodesic interpolation of the fiber between bracketing samples."""
        theta = theta % (2.0 * np.pi)
        k = self.size
        idx = int(np.searchsorted(self.thetas, theta))
        i = (idx - 1) % k
        j = idx % k
        ti, tj = self.thetas[i], self.thetas[j]
        gap = (tj - ti) % (2.0 * np.pi)
        if gap < 1e-12:
            return self.fibers[i]
        t = ((theta - ti) % (2.0 * np.pi)) / gap
        return _slerp(self.fibers[i], self.fibers[j], t)

    def boundary_point(self, theta: float) -> BoundaryPoint:
        return from_graph_sample(theta, self.fiber_at(theta))

    def sample_points(self) -> list[BoundaryPoint]:
        return [from_graph_sample(t, f) for t, f in zip(self.thetas, self.fibers)]


def loop_classify(loop: LipschitzLoop, tol: float = 1e-8) -> str:
    """'positive' when strictly contracting on all sampled pairs,
    'semipositive' when 1-Lipschitz within tol but not a sampled isometry,
    'invalid' otherwise."""
    k = loop.size
    d1 = np.zeros((k, k))
    dn = np.zeros((k, k))
    dots = np.clip(loop.fibers @ loop.fibers.T, -1.0, 1.0)
    for i in range(k):
        for j in range(i + 1, k):
            d1[i, j] = _circle_dist(loop.thetas[i], loop.thetas[j])
    dn_full = np.arccos(dots)
    iu = np.triu_indices(k, 1)
    gaps = d1[iu] - dn_full[iu]
    if np.all(gaps > tol):
        return "positive"
    if np.all(gaps >= -tol):
        if np.all(np.abs(gaps) <= tol):
            return "invalid"  # a sampled global isometry traces a photon
        return "semipositive"
    return "invalid"


def photon_arc(loop: LipschitzLoop, tol: float = 1e-8) -> list[tuple[int, int]]:
    """Maximal sample-index arcs on which the loop is sampled-rigid (fiber
    distance matches circle distance on every pair within the arc). Arcs are
    returned as (start, end) index pairs, inclusive, cyclic; arcs with empty
    interior are dropped."""
    k = loop.size
    d1 = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            d1[i, j] = _circle_dist(loop.thetas[i], loop.thetas[j])
    dots = np.clip(loop.fibers @ loop.fibers.T, -1.0, 1.0)
    rigid = np.arccos(dots) >= d1 - tol

    def window_rigid(i: int, j_len: int) -> bool:
        idx = [(i + t) % k for t in range(j_len + 1)]
        sub = rigid[np.ix_(idx, idx)]
        return bool(np.all(sub))

    # longest rigid window starting at each sample
    best = np.zeros(k, dtype=int)
    for i in range(k):
        ln = 0
        while ln + 1 < k and window_rigid(i, ln + 1):
            ln += 1
        best[i] = ln
    arcs = []
    for i in range(k):
        if best[i] == 0:
            continue
        prev = (i - 1) % k
        # maximal iff not contained in the window of the previous start
        if best[prev] >= best[i] + 1:
            continue
        arcs.append((i, (i + best[i]) % k))
    return arcs


# ---------------------------------------------------------------------------
# Barbot crowns


@dataclass(frozen=True)
class BarbotCrown:
    """Four cyclically ordered vertices joined by photon segments, with
    representatives normalised to pair to 0 consecutively and -1/4 across."""

    zreps: np.ndarray  # 4 x (n+3)

    @property
    def n(self) -> int:
        return self.zreps.shape[1] - 3

    def vertices(self, form: BilinearForm) -> list[BoundaryPoint]:
        return [boundary_point(form, z) for z in self.zreps]


def validate_crown(form: BilinearForm, crown: BarbotCrown, atol: float = 1e-10) -> None:
    z = crown.zreps
    for i in range(4):
        if abs(form.q(z[i])) > atol:
            raise DegenerateCrownError("crown representative is not isotropic")
        if abs(form.inner(z[i], z[(i + 1) % 4])) > atol:
            raise DegenerateCrownError("consecutive crown vertices must pair to zero")
    for i in range(2):
        if abs(form.inner(z[i], z[i + 2]) + 0.25) > atol:
            raise DegenerateCrownError("diagonal crown pairing must equal -1/4")
    if subspace_signature(form, z).as_tuple() != (2, 2, 0):
        raise DegenerateCrownError("crown span must have signature (2, 2)")


def barbot_crown_standard(n: int) -> BarbotCrown:
    """The model crown with vertices on the coordinate photons."""
    if n < 1:
        raise DegenerateCrownError("a crown needs n >= 1")
    s = 1.0 / (2.0 * np.sqrt(2.0))
    z = np.zeros((4, n + 3))
    z[0, 0], z[0, 2] = s, s
    z[1, 1], z[1, 3] = s, s
    z[2, 0], z[2, 2] = -s, s
    z[3, 1], z[3, 3] = -s, s
    crown = BarbotCrown(z)
    validate_crown(BilinearForm(n), crown)
    return crown


def crown_from_corners(form: BilinearForm, corners) -> BarbotCrown:
    """Build a crown from four cyclically ordered vertex representatives on
    consecutive photons, fixing the diagonal gauge symmetrically."""
    w = np.array([_as_vector(c) for c in corners], dtype=float)
    if form.inner(w[0], w[2]) > 0:
        w[2] = -w[2]
    if form.inner(w[1], w[3]) > 0:
        w[3] = -w[3]
    p02 = form.inner(w[0], w[2])
    p13 = form.inner(w[1], w[3])
    if p02 >= 0 or p13 >= 0:
        raise DegenerateCrownError("diagonal pairs must be transverse")
    c0 = (-0.25 / p02) ** 0.5
    c1 = (-0.25 / p13) ** 0.5
    z = np.array([c0 * w[0], c1 * w[1], c0 * w[2], c1 * w[3]])
    crown = BarbotCrown(z)
    validate_crown(form, crown, atol=1e-8)
    return crown


def crown_loop(crown: BarbotCrown, samples_per_edge: int = 24) -> LipschitzLoop:
    """Sample the crown as a loop graph: each edge is the positive span of
    two consecutive vertex representatives."""
    pts = []
    for i in range(4):
        zi = crown.zreps[i]
        zj = crown.zreps[(i + 1) % 4]
        for t in np.linspace(0.0, 1.0, samples_per_edge, endpoint=False):
            vec = np.cos(t * np.pi / 2.0) * zi + np.sin(t * np.pi / 2.0) * zj
            nu = np.linalg.norm(vec[:2])
            nv = np.linalg.norm(vec[2:])
            theta = np.arctan2(vec[1] / nu, vec[0] / nu) % (2.0 * np.pi)
            pts.append((theta, vec[2:] / nv))
    thetas = np.array([p[0] for p in pts])
    fibers = np.array([p[1] for p in pts])
    return LipschitzLoop(thetas, fibers, c1=False)


def crown_seeded_from_arc(form: BilinearForm, loop: LipschitzLoop, tol: float = 1e-8) -> BarbotCrown:
    """Seed a crown from the extremities of a photon arc of a semi-positive
    loop, completing the two remaining vertices by a Witt-style construction."""
    arcs = photon_arc(loop, tol=tol)
    if not arcs:
        raise InvalidLoopError("loop has no photon arc; nothing to seed a crown from")
    if len(arcs) == 4:
        corners = [from_graph_sample(loop.thetas[a[0]], loop.fibers[a[0]]).rep for a in arcs]
        return crown_from_corners(form, corners)
    i0, i1 = arcs[0]
    w1 = from_graph_sample(loop.thetas[i0], loop.fibers[i0]).rep
    w2 = from_graph_sample(loop.thetas[i1], loop.fibers[i1]).rep

    def witt_partner(w, others):
        # an isotropic vector pairing nontrivially with w and to zero with
        # each of `others`; requires w itself q-orthogonal to the others,
        # which holds along the photon quadrilateral being completed
        A = np.array([form.signs * o for o in others])
        _, sv, vh = np.linalg.svd(A)
        rank = int(np.sum(sv > 1e-12 * max(sv[0], 1.0)))
        null = vh[rank:]
        for m in null:
            pw = form.inner(w, m)
            if abs(pw) > 1e-6:
                return m - (form.q(m) / (2.0 * pw)) * w
        raise DegenerateCrownError("failed to complete the crown seed")

    y1 = witt_partner(w1, [w2])
    y2 = witt_partner(w2, [w1, y1])
    return crown_from_corners(form, [w1, w2, y1, y2])


# ---------------------------------------------------------------------------
# Loop file format


LOOP_HEADER = "einstein-loop v1"


def loop_save(loop: LipschitzLoop, path) -> None:
    with open(path, "w") as fh:
        fh.write(loop_dumps(loop))


def loop_dumps(loop: LipschitzLoop) -> str:
    out = io.StringIO()
    out.write(f"{LOOP_HEADER} n={loop.n} samples={loop.size}")
    if loop.c1:
        out.write(" c1=1")
    out.write("\n")
    for t, f in zip(loop.thetas, loop.fibers):
        coords = " ".join(repr(float(x)) for x in f)
        out.write(f"{float(t)!r} {coords}\n")
    return out.getvalue()


def loop_load(path) -> LipschitzLoop:
    with open(path) as fh:
        return loop_loads(fh.read())


def loop_loads(text: str) -> LipschitzLoop:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(LOOP_HEADER):
        raise InvalidLoopError("missing loop header")
    fields = dict(tok.split("=") for tok in lines[0].split()[2:])
    n = int(fields["n"])
    k = int(fields["samples"])
    c1 = fields.get("c1", "0") == "1"
    if len(lines) - 1 != k:
        raise InvalidLoopError(f"header promises {k} samples, file has {len(lines) - 1}")
    thetas = np.zeros(k)
    fibers = np.zeros((k, n + 1))
    for i, ln in enumerate(lines[1:]):
        vals = [float(t) for t in ln.split()]
        if len(vals) != n + 2:
            raise InvalidLoopError(f"sample line {i} has {len(vals)} fields, expected {n + 2}")
        thetas[i] = vals[0]
        f = np.array(vals[1:])
        nf = np.linalg.norm(f)
        if abs(nf - 1.0) > 1e-6:
            raise InvalidLoopError(f"sample {i} is off the unit sphere by {abs(nf - 1.0):.2e}")
        fibers[i] = f / nf
    return LipschitzLoop(thetas, fibers, c1=c1)

"""Cross-ratios on the boundary and the quasisymmetry toolkit built on them.

The four-point invariant <x,y><z,t> / (<x,t><z,y>) generalises the squared
cross-ratio of the projective line: on circle maps the two agree exactly,
and uniform control of the invariant over a window of projective
cross-ratios is what certification measures.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .qcore import BilinearForm, GeometryError
from .einstein import (
    BoundaryPoint,
    ChartDomainError,
    CoincidentPointsError,
    MinkowskiChart,
    NonTransverseError,
    in_closed_diamond,
    minkowski_chart_apply,
    minkowski_chart_inverse,
    projectively_equal,
    quadruple_positive,
    standard_circle,
    tau_chart,
    transverse,
)
from .hspace import visual_distance


class NonPositiveMapError(GeometryError):
    pass


class InsufficientSamplesError(GeometryError):
    pass


class InsufficientSpreadError(GeometryError):
    pass


def cross_ratio_b(form: BilinearForm, x: BoundaryPoint, y: BoundaryPoint,
                  z: BoundaryPoint, t: BoundaryPoint) -> float:
    """<x,y><z,t> / (<x,t><z,y>); independent of the representative scaling.
    Requires a pairwise transverse quadruple."""
    pts = (x, y, z, t)
    for i in range(4):
        for j in range(i + 1, 4):
            if not transverse(form, pts[i], pts[j]):
                raise NonTransverseError("cross-ratio needs pairwise transverse points")
    num = form.inner(x.rep, y.rep) * form.inner(z.rep, t.rep)
    den = form.inner(x.rep, t.rep) * form.inner(z.rep, y.rep)
    return float(num / den)


def _lift(value) -> np.ndarray:
    if value is None or (isinstance(value, float) and math.isinf(value)):
        return np.array([1.0, 0.0])
    return np.array([float(value), 1.0])


def cross_ratio_real(x, y, z, t) -> float:
    """Classical cross-ratio of projective-line points given as real values
    (math.inf for the point at infinity); points must be pairwise distinct."""
    lifts = [_lift(v) for v in (x, y, z, t)]

    def om(a, b):
        return a[0] * b[1] - a[1] * b[0]

    for i in range(4):
        for j in range(i + 1, 4):
            if abs(om(lifts[i], lifts[j])) < 1e-300:
                raise CoincidentPointsError("cross-ratio of coincident points")
    num = om(lifts[0], lifts[1]) * om(lifts[2], lifts[3])
    den = om(lifts[0], lifts[3]) * om(lifts[2], lifts[1])
    return float(num / den)


def angle_lift(theta: float) -> np.ndarray:
    """Lift of the circle parameter to the projective plane: the circle
    double-covers the projective line at half angle."""
    return np.array([np.cos(theta / 2.0), np.sin(theta / 2.0)])


def cross_ratio_angles(tx, ty, tz, tt) -> float:
    """Projective cross-ratio of four circle parameters."""
    lifts = [angle_lift(t) for t in (tx, ty, tz, tt)]

    def om(a, b):
        return a[0] * b[1] - a[1] * b[0]

    den = om(lifts[0], lifts[3]) * om(lifts[2], lifts[1])
    num = om(lifts[0], lifts[1]) * om(lifts[2], lifts[3])
    if abs(den) < 1e-300:
        raise CoincidentPointsError("cross-ratio of coincident angles")
    return float(num / den)


def value_to_angle(value) -> float:
    """Circle parameter of a projective value, inverse to cot(theta/2)."""
    if value is None or (isinstance(value, float) and math.isinf(value)):
        return 0.0
    return float(2.0 * np.arctan2(1.0, float(value)) % (2.0 * np.pi))


@dataclass
class SampledBoundaryMap:
    """A boundary map sampled on circle parameters of the projective line."""

    domain: np.ndarray
    images: list
    defined_on: str = "samples"

    def __post_init__(self):
        dom = np.asarray(self.domain, dtype=float) % (2.0 * np.pi)
        order = np.argsort(dom)
        self.domain = dom[order]
        self.images = [self.images[i] for i in order]
        if len(self.domain) != len(self.images):
            raise GeometryError("domain and image sample counts differ")
        if np.any(np.diff(self.domain) <= 1e-12):
            raise GeometryError("domain samples must be strictly increasing")

    @property
    def size(self) -> int:
        return len(self.domain)


def circle_map(form: BilinearForm, domain) -> SampledBoundaryMap:
    """The canonical embedding of the projective line onto the standard
    spacelike circle (sends circle parameters to circle points)."""
    circ = standard_circle(form)
    domain = np.asarray(domain, dtype=float)
    return SampledBoundaryMap(domain, [circ.point_at(t) for t in domain], "projective line")


def circle_map_test(form: BilinearForm, bmap: SampledBoundaryMap, tol: float = 1e-10,
                    max_quadruples: int = 3000, det_tol: float = 1e-8) -> bool:
    """Whether the sampled map satisfies the squared-cross-ratio identity on
    sampled quadruples, cross-checked by the vanishing of the 4x4 Gram
    determinants."""
    k = bmap.size
    if k < 4:
        raise InsufficientSamplesError("need at least four samples")
    quads = _quadruple_indices(k, max_quadruples)
    from .qcore import subspace_signature

    sig_ok = False
    for shift in range(min(k // 3, 16)):
        idx = (shift, (shift + k // 3) % k, (shift + (2 * k) // 3) % k)
        sig = subspace_signature(form, [bmap.images[t].rep for t in idx]).as_tuple()
        if sig == (2, 1, 0):
            sig_ok = True
            break
    if not sig_ok:
        raise NonPositiveMapError("image contains no positive triple")
    for (i, j, l, m) in quads:
        r = cross_ratio_angles(*(bmap.domain[t] for t in (i, j, l, m)))
        try:
            b = cross_ratio_b(form, *(bmap.images[t] for t in (i, j, l, m)))
        except NonTransverseError:
            # circle maps keep distinct points transverse, so this already
            # refutes the identity
            return False
        if abs(b - r * r) > tol * (1.0 + r * r):
            return False
        reps = np.array([bmap.images[t].rep for t in (i, j, l, m)])
        gram = (reps * form.signs) @ reps.T
        scale = np.prod(np.linalg.norm(gram, axis=1))
        if scale > 0 and abs(np.linalg.det(gram)) > det_tol * scale:
            return False
    return True


def _quadruple_indices(k: int, cap: int) -> list[tuple[int, int, int, int]]:
    """Deterministic spread of ordered index quadruples."""
    quads = []
    if k >= 4:
        step = max(1, k // 12)
        idx = list(range(0, k, step))
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                for c in range(b + 1, len(idx)):
                    for d in range(c + 1, len(idx)):
                        quads.append((idx[a], idx[b], idx[c], idx[d]))
                        if len(quads) >= cap:
                            return quads
    return quads


@dataclass
class QSCertificate:
    A: float
    B: float
    quadruples_tested: int
    worst_quadruple: tuple[float, float, float, float]
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "A": self.A,
                "B_measured": self.B,
                "quadruples_tested": self.quadruples_tested,
                "worst_quadruple": list(self.worst_quadruple),
                "seed": self.seed,
            },
            sort_keys=True,
        )


def _worker_count() -> int:
    cap = os.environ.get("PSEUDOPLATEAU_THREADS", "1")
    try:
        return max(1, int(cap))
    except ValueError:
        return 1


def _certify_chunk(form, bmap, A, target, chunk_seed):
    rng = np.random.default_rng(chunk_seed)
    k = bmap.size
    best = 1.0
    worst = None
    accepted = 0
    attempts = 0
    while accepted < target and attempts < 80 * target:
        attempts += 1
        sel = np.sort(rng.choice(k, size=4, replace=False))
        i, j, l, m = (int(s) for s in sel)
        r = cross_ratio_angles(*(bmap.domain[t] for t in sel))
        if not (1.0 / A <= abs(r) <= A):
            continue
        pts = [bmap.images[t] for t in sel]
        if not quadruple_positive(form, *pts):
            raise NonPositiveMapError("sampled quadruple is not positive")
        b = cross_ratio_b(form, *pts)
        accepted += 1
        score = max(abs(b), 1.0 / abs(b))
        if score > best:
            best = score
            worst = tuple(float(bmap.domain[t]) for t in sel)
    return best, worst, accepted


def qs_certify(form: BilinearForm, bmap: SampledBoundaryMap, A: float = 2.0,
               n_quadruples: int = 2000, rng_seed: int = 0) -> QSCertificate:
    """Measure the distortion constant B over sampled quadruples whose
    projective cross-ratio lies in the window [1/A, A]. Deterministic given
    the seed and independent of the worker count."""
    if A <= 1.0:
        raise GeometryError("the window parameter must exceed 1")
    if bmap.size < 8:
        raise InsufficientSamplesError("too few samples to certify")
    chunk = 256
    n_chunks = (n_quadruples + chunk - 1) // chunk
    targets = [min(chunk, n_quadruples - c * chunk) for c in range(n_chunks)]
    jobs = [(form, bmap, A, targets[c], np.random.SeedSequence((rng_seed, c)))
            for c in range(n_chunks)]
    workers = _worker_count()
    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda args: _certify_chunk(*args), jobs))
    else:
        results = [_certify_chunk(*j) for j in jobs]
    best = 1.0
    worst = None
    total = 0
    for b, w, acc in results:
        total += acc
        if b > best or worst is None:
            best = max(best, b)
            if w is not None:
                worst = w
    if total == 0:
        raise InsufficientSamplesError("rejection sampling accepted no quadruple")
    if worst is None:
        worst = (0.0, 0.0, 0.0, 0.0)
    return QSCertificate(A=float(A), B=float(best), quadruples_tested=int(total),
                         worst_quadruple=worst, seed=int(rng_seed))


def qs_rescale(A: float, B: float, C: float) -> float:
    """Distortion constant after enlarging the cross-ratio window from A
    to C, via the cocycle chain bound."""
    if A <= 1.0 or B < 1.0 or C <= 1.0:
        raise GeometryError("window constants must exceed 1 (and B >= 1)")
    if C <= A:
        return float(B)
    return float(B ** (1.0 + math.log(C / A)))


# ---------------------------------------------------------------------------
# Semi-positive maps into flat R^{1,n}


def _q1n(u: np.ndarray) -> float:
    return float(u[0] ** 2 - np.dot(u[1:], u[1:]))


def semipositive_complete(xs, fs, tol: float = 1e-9, jump_factor: float = 20.0):
    """One-sided completions of a semi-positive map sampled on a grid of an
    interval: f_plus is the forward causal infimum, f_minus the backward
    one; both agree with the input away from detected jumps."""
    xs = np.asarray(xs, dtype=float)
    fs = np.asarray(fs, dtype=float)
    if xs.ndim != 1 or fs.shape[0] != xs.shape[0]:
        raise GeometryError("mismatched sample arrays")
    order = np.argsort(xs)
    xs = xs[order]
    fs = fs[order]
    k = len(xs)
    for i in range(k - 1):
        d = fs[i + 1] - fs[i]
        if _q1n(d) < -tol or d[0] < -tol:
            raise GeometryError("input is not semi-positive on consecutive samples")
    gaps = np.linalg.norm(np.diff(fs, axis=0), axis=1)
    scale = np.median(gaps) if k > 2 else 0.0
    jump = gaps > jump_factor * max(scale, 1e-300)
    fplus = fs.copy()
    fminus = fs.copy()
    for i in range(k - 1):
        if jump[i]:
            # right limit at the left end of the gap is the value across it
            # only when the sample sits on the left side of the jump
            fminus[i + 1] = fs[i]
    for i in range(k - 1, 0, -1):
        if jump[i - 1]:
            fplus[i - 1] = fs[i]
    return fplus, fminus


# ---------------------------------------------------------------------------
# Contraction of nested diamonds


@dataclass
class ContractionReport:
    max_ratio: float
    bound: float
    chord_ratio_measured: float
    chord_ratio_formula: float
    chord_bound: float
    samples: int


def _diamond_grid(n: int, per_axis: int) -> list[np.ndarray]:
    """Deterministic grid inside the standard diamond |s| + |w| < 1."""
    pts = []
    for s in np.linspace(-0.8, 0.8, per_axis):
        for w in np.linspace(-0.8, 0.8, per_axis):
            if abs(s) + abs(w) >= 0.95:
                continue
            u = np.zeros(n + 1)
            u[0] = s
            u[1] = w
            pts.append(u)
    return pts


def contraction_check(form: BilinearForm, tau, tau_prime, B: float,
                      per_axis: int = 7) -> ContractionReport:
    """Measured contraction of the diamond distance between nested diamonds
    with cross-ratio control B, against the bound (B-1)/(B+1), plus the
    lightlike chord length of the controlled region."""
    a, b, c = tau
    a2, x, y = tau_prime
    if not projectively_equal(a, a2, atol=1e-8):
        raise GeometryError("the two triples must share their first point")
    if B <= 1.0:
        raise GeometryError("the cross-ratio control must exceed 1")
    for p in (x, y):
        if not in_closed_diamond(form, tau, p, tol=1e-7):
            raise ChartDomainError("inner diamond endpoints must lie in the outer diamond")
        val = cross_ratio_b(form, a, b, p, c)
        if not (1.0 / B - 1e-9 <= val <= B + 1e-9):
            raise GeometryError(f"cross-ratio control violated: b = {val:.6f}")
    chart_outer = tau_chart(form, (a, b, c))
    chart_inner = tau_chart(form, (a2, x, y))
    grid = _diamond_grid(form.n, per_axis)
    pts = [minkowski_chart_apply(form, chart_inner, u) for u in grid]
    inner_coords = np.array(grid)
    outer_coords = np.array([minkowski_chart_inverse(form, chart_outer, p) for p in pts])
    max_ratio = 0.0
    count = 0
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            di = np.linalg.norm(inner_coords[i] - inner_coords[j])
            if di < 1e-9:
                continue
            do = np.linalg.norm(outer_coords[i] - outer_coords[j])
            max_ratio = max(max_ratio, do / di)
            count += 1
    chord_measured, chord_formula = _lightlike_chord_ratio(form, chart_outer, B)
    bound = (B - 1.0) / (B + 1.0)
    return ContractionReport(
        max_ratio=float(max_ratio),
        bound=float(bound),
        chord_ratio_measured=float(chord_measured),
        chord_ratio_formula=float(chord_formula),
        chord_bound=float(bound * np.sqrt(2.0)),
        samples=count,
    )


def lightlike_chord_formula(B: float, lam: float) -> float:
    """Fraction of a lightlike chord of the diamond on which the anchored
    cross-ratio stays within [1/B, B]."""
    return (B * B - 1.0) * lam / ((B + lam) * (lam * B + 1.0))


def _lightlike_chord_ratio(form: BilinearForm, chart: MinkowskiChart, B: float,
                           offset: float = 0.3):
    """Measure the controlled fraction of one lightlike chord of the diamond
    in the given chart, and evaluate the closed form at the chord's lambda."""
    n = chart.n
    e1 = np.zeros(n + 1)
    e1[0] = 1.0
    u_dir = np.zeros(n + 1)
    u_dir[0] = 1.0
    u_dir[1] = 1.0
    x0 = np.zeros(n + 1)
    x0[1] = offset

    def t_hit(center):
        # line x0 + t u_dir meets the cone q(x - center) = 0 at a single t
        rel = x0 - center
        qrel = rel[0] ** 2 - np.dot(rel[1:], rel[1:])
        pair = rel[0] * u_dir[0] - np.dot(rel[1:], u_dir[1:])
        return -qrel / (2.0 * pair)

    tb = t_hit(-e1)
    tc = t_hit(e1)
    p = x0 + tb * u_dir
    qq = x0 + tc * u_dir
    seg = qq - p

    def bval(t):
        w = p + t * seg
        return _q1n(w - e1) / _q1n(w + e1)

    lam = bval(0.5)
    if not (1.0 / B < lam < B):
        raise GeometryError("chord offset places the midpoint outside the controlled region")
    formula = lightlike_chord_formula(B, lam)

    def solve(target, bracket):
        a_, b_ = bracket
        fa = bval(a_) - target
        for _ in range(200):
            m = 0.5 * (a_ + b_)
            fm = bval(m) - target
            if fa * fm <= 0:
                b_ = m
            else:
                a_, fa = m, fm
            if b_ - a_ < 1e-15:
                break
        return 0.5 * (a_ + b_)

    t_hi_end = solve(1.0 / B, (0.5, 1.0 - 1e-12))
    t_lo_end = solve(B, (1e-12, 0.5))
    measured = abs(t_hi_end - t_lo_end)
    return measured, formula


# ---------------------------------------------------------------------------
# Hoelder modulus


def _mobius_to_reference(angles):
    """PSL(2) matrix sending the three given circle parameters to the
    equilateral reference parameters (0, 2pi/3, 4pi/3)."""
    src = np.column_stack([angle_lift(t) for t in angles])
    dst = np.column_stack([angle_lift(t) for t in (0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0)])

    def normalize(cols):
        A = cols[:, :2]
        coef = np.linalg.solve(A, cols[:, 2])
        return A * coef

    Ms = normalize(src)
    Md = normalize(dst)
    return Md @ np.linalg.inv(Ms)


def source_visual_distance(mobius: np.ndarray, t1: float, t2: float) -> float:
    """Angle distance on the circle after the triple normalisation."""
    def push(t):
        v = mobius @ angle_lift(t)
        return 2.0 * np.arctan2(v[1], v[0])

    d = abs(push(t1) - push(t2)) % (2.0 * np.pi)
    return min(d, 2.0 * np.pi - d)


@dataclass
class HolderFit:
    M: float
    alpha: float
    pairs: int


def holder_estimate(form: BilinearForm, bmap: SampledBoundaryMap, tau0_angles,
                    quantile: float = 0.99, max_pairs: int = 4000) -> HolderFit:
    """Fit the one-sided modulus d_target <= M d_source^alpha over sampled
    pairs: slope by least squares, envelope by the residual quantile."""
    dom = bmap.domain
    gaps = np.diff(np.concatenate([dom, [dom[0] + 2.0 * np.pi]]))
    if np.max(gaps) > np.pi / 2.0:
        raise InsufficientSpreadError("domain samples leave an arc wider than pi/2 uncovered")
    mob = _mobius_to_reference(tau0_angles)
    image_triple = []
    for t in tau0_angles:
        idx = int(np.argmin(np.abs((dom - t + np.pi) % (2 * np.pi) - np.pi)))
        image_triple.append(bmap.images[idx])
    k = bmap.size
    rng_idx = []
    step = max(1, (k * (k - 1) // 2) // max_pairs)
    cnt = 0
    for i in range(k):
        for j in range(i + 1, k):
            if cnt % step == 0:
                rng_idx.append((i, j))
            cnt += 1
    logs_src = []
    logs_dst = []
    for i, j in rng_idx:
        ds = source_visual_distance(mob, dom[i], dom[j])
        dt = visual_distance(form, [p.rep for p in image_triple], bmap.images[i], bmap.images[j])
        if ds < 1e-9 or dt < 1e-9:
            continue
        logs_src.append(math.log(ds))
        logs_dst.append(math.log(dt))
    if len(logs_src) < 50:
        raise InsufficientSpreadError("too few usable pairs for a modulus fit")
    ls = np.array(logs_src)
    ld = np.array(logs_dst)
    if np.max(ls) - np.min(ls) < 1.0:
        raise InsufficientSpreadError("pair distances span less than one decade")
    slope, intercept = np.polyfit(ls, ld, 1)
    if slope <= 0:
        raise InsufficientSpreadError("fitted modulus exponent is not positive")
    resid = ld - slope * ls
    log_m = float(np.quantile(resid, quantile))
    return HolderFit(M=float(np.exp(log_m)), alpha=float(slope), pairs=len(ls))

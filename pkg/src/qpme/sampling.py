"""Space-time training-data generation.

Interior points come from a three-region mixture: with probability theta0
a draw lands uniformly in the inner ball V0 (support of the initial
datum), with theta1 uniformly in the shell V1 between the initial and
final free-boundary radii, and with theta2 = 1 - theta0 - theta1
uniformly over the whole box.  Region-wise constant correction weights
c = |V_i| / (|Omega| P_{V_i}) make the weighted sample mean an unbiased
estimator of the 1/|Omega|-scaled integral.  Region volumes are carried
in log space; at d=20 the ball-to-box ratio is already ~1.6e-8.

The RNG is a seeded numpy Generator (PCG64); identical seeds give
byte-identical sample streams.  Parallel workers must use independently
seeded substreams (e.g. rng.spawn()).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .analytic import DomainSpec


@dataclass(frozen=True)
class MixtureSpec:
    """Three-region weighted sampling configuration."""

    d: int
    theta0: float
    theta1: float
    r0: float
    rT: float
    half_widths: tuple

    def __post_init__(self):
        object.__setattr__(self, "half_widths", tuple(float(a) for a in self.half_widths))
        if self.theta0 < 0 or self.theta1 < 0 or self.theta0 + self.theta1 > 1 + 1e-12:
            raise ValueError("theta0, theta1 must be nonnegative with sum <= 1")
        if not 0 < self.r0 < self.rT:
            raise ValueError("need 0 < r0 < rT")
        if self.rT > min(self.half_widths) + 1e-12:
            raise ValueError("rT must not exceed the smallest half-width")
        if len(self.half_widths) != self.d:
            raise ValueError("half_widths length must equal d")

    @property
    def theta2(self):
        return 1.0 - self.theta0 - self.theta1


@dataclass
class SampleBatch:
    """Batch of weighted space-time samples; x has shape (d, n)."""

    t: np.ndarray
    x: np.ndarray
    region: np.ndarray  # 0: inner ball, 1: shell, 2: outside
    c: np.ndarray       # correction weight, constant per region


def _log_ball_volume(d, r):
    return d / 2.0 * np.log(np.pi) + d * np.log(r) - gammaln(d / 2.0 + 1.0)


def region_log_volumes(spec: MixtureSpec):
    """(log|V0|, log|V1|, log|V2|, log|Omega|)."""
    log_omega = float(np.sum(np.log(2.0 * np.asarray(spec.half_widths))))
    lv0 = _log_ball_volume(spec.d, spec.r0)
    lball_T = _log_ball_volume(spec.d, spec.rT)
    # |V1| = omega_d (rT^d - r0^d): factor out the larger ball
    lv1 = lball_T + np.log1p(-np.exp(lv0 - lball_T))
    lv2 = log_omega + np.log1p(-np.exp(lball_T - log_omega))
    return float(lv0), float(lv1), float(lv2), log_omega


def region_probabilities(spec: MixtureSpec):
    """P(sample lands in V_i) under the mixture."""
    lv0, lv1, lv2, lom = region_log_volumes(spec)
    th2 = spec.theta2
    p0 = spec.theta0 + th2 * np.exp(lv0 - lom)
    p1 = spec.theta1 + th2 * np.exp(lv1 - lom)
    p2 = th2 * np.exp(lv2 - lom)
    return p0, p1, p2


def correction_weights(spec: MixtureSpec):
    """c_i = |V_i| / (|Omega| P_{V_i}) per region."""
    lv0, lv1, lv2, lom = region_log_volumes(spec)
    probs = region_probabilities(spec)
    vols = (np.exp(lv0 - lom), np.exp(lv1 - lom), np.exp(lv2 - lom))
    # a region with zero hit probability is never sampled; weight is unused
    return tuple(v / p if p > 0 else 0.0 for v, p in zip(vols, probs))


def sample_unit_ball(rng: np.random.Generator, d: int, n: int = None):
    """Uniform draws inside the d-ball: Gaussian direction, radius u^(1/d).

    Returns shape (d,) for n=None, else (d, n).
    """
    m = 1 if n is None else n
    g = rng.standard_normal((d, m))
    norms = np.linalg.norm(g, axis=0)
    while np.any(norms < 1e-300):  # essentially impossible; resample
        bad = norms < 1e-300
        g[:, bad] = rng.standard_normal((d, int(bad.sum())))
        norms = np.linalg.norm(g, axis=0)
    direction = g / norms
    r = rng.random(m) ** (1.0 / d)
    pts = direction * r
    return pts[:, 0] if n is None else pts


def _sample_shell(rng, d, r0, rT, n):
    """Uniform in the shell r0 < |x| <= rT via the radial inverse CDF."""
    g = rng.standard_normal((d, n))
    direction = g / np.linalg.norm(g, axis=0)
    u = rng.random(n)
    r = (r0**d + u * (rT**d - r0**d)) ** (1.0 / d)
    return direction * r


def sample_mixture(rng: np.random.Generator, spec: MixtureSpec, T: float,
                   n: int = None) -> SampleBatch:
    """Draw weighted interior samples; t uniform on [0,T] independently."""
    m = 1 if n is None else n
    a = np.asarray(spec.half_widths)
    comp = rng.random(m)
    x = np.empty((spec.d, m))
    sel0 = comp < spec.theta0
    sel1 = (~sel0) & (comp < spec.theta0 + spec.theta1)
    sel2 = ~(sel0 | sel1)
    if sel0.any():
        x[:, sel0] = spec.r0 * sample_unit_ball(rng, spec.d, int(sel0.sum()))
    if sel1.any():
        x[:, sel1] = _sample_shell(rng, spec.d, spec.r0, spec.rT, int(sel1.sum()))
    if sel2.any():
        x[:, sel2] = rng.uniform(-1.0, 1.0, (spec.d, int(sel2.sum()))) * a[:, None]
    t = rng.uniform(0.0, T, m)
    r = np.linalg.norm(x, axis=0)
    region = np.where(r <= spec.r0, 0, np.where(r <= spec.rT, 1, 2))
    c_by_region = np.array(correction_weights(spec))
    batch = SampleBatch(t=t, x=x, region=region, c=c_by_region[region])
    if n is None:
        return SampleBatch(t=batch.t[0], x=batch.x[:, 0],
                           region=int(batch.region[0]), c=float(batch.c[0]))
    return batch


def sample_boundary(rng: np.random.Generator, domain: DomainSpec, T: float,
                    n: int = None):
    """(t, x) with x uniform on the box boundary: face picked proportional
    to its area, in-face coordinates uniform, t uniform on [0,T]."""
    m = 1 if n is None else n
    a = np.asarray(domain.half_widths)
    d = domain.d
    log_omega = np.sum(np.log(2.0 * a))
    # area of each +/- face pair along axis i is |Omega| / (2 a_i) each
    face_w = 1.0 / a
    face_p = face_w / face_w.sum()
    axis = rng.choice(d, size=m, p=face_p)
    sign = np.where(rng.random(m) < 0.5, -1.0, 1.0)
    x = rng.uniform(-1.0, 1.0, (d, m)) * a[:, None]
    x[axis, np.arange(m)] = sign * a[axis]
    t = rng.uniform(0.0, T, m)
    if n is None:
        return float(t[0]), x[:, 0]
    return t, x


def dump_samples_csv(path, batch: SampleBatch):
    """Write `t,x_1..x_d,region,c` rows (RFC-4180, LF endings)."""
    d = batch.x.shape[0]
    cols = ["t"] + [f"x_{i+1}" for i in range(d)] + ["region", "c"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for j in range(batch.t.shape[0]):
            row = [f"{batch.t[j]:.17g}"]
            row += [f"{batch.x[i, j]:.17g}" for i in range(d)]
            row += [str(int(batch.region[j])), f"{batch.c[j]:.17g}"]
            fh.write(",".join(row) + "\n")

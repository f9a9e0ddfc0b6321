"""Find the point on a sphere that is closest, in summed distance, to a cloud.

Two reference centers with radii taken from the cloud's own geometric median
should agree on the same constrained point. A deliberately wrong radius
breaks that agreement, which is what the consistency check reports.

    python demos/fixed_point.py
"""
import numpy as np

from quasistates import fixedpoint as fp

rng = np.random.default_rng(0)
cloud = np.array([1.0, 2.0, 0.5, -1.0]) + 0.2 * rng.standard_normal((200, 4))
median = fp.geometric_median(cloud)
print("geometric median", np.round(median, 4))

refs = [np.zeros(4), np.array([3.0, 0.0, 0.0, 0.0])]
good = [(mu, float(np.linalg.norm(median - mu))) for mu in refs]
report = fp.reference_consistency(cloud, good, tol_match=0.05)
print(f"matching radii: consistent={report.consistent}, "
      f"distance {report.distances[0, 1]:.2e}")

bad = [good[0], (refs[1], good[1][1] * 1.3)]
report = fp.reference_consistency(cloud, bad, tol_match=0.05)
print(f"radius off by 30%: consistent={report.consistent}, "
      f"distance {report.distances[0, 1]:.3f}")

res = fp.constrained_fixed_point(fp.FixedPointProblem(cloud, refs[0], 1.0))
delta = fp.delta_series(cloud, res.point, cloud.mean(axis=0))
print(f"on a unit sphere: unique={res.unique}, "
      f"mean Delta {delta.values.mean():.3f} (positive: mean is the closer reference)")

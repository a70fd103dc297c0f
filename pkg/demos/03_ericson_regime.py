"""
Many open channels: Ericson fluctuations
========================================

With ten fully transmitting leads the correlation functions approach simple
closed forms: a Lorentzian two-point function whose width is set by the sum
of transmission coefficients, and Gaussian statistics for the elements.
"""

import numpy as np

from qgraph import CorrelatorSpec, build_graph, estimate_correlators, make_system, mean_level_density
from qgraph.correlators import distribution_report
from qgraph.theory import ericson_pq, ericson_two_point, ericson_width

g = build_graph(16, 10, seed=3)
sys = make_system(g, t_coeff=1.0, seed=3)
t = sys.transmissions
d = mean_level_density(g)
print(f"sum T = {t.sum():.1f}, <d> = {d:.3f}, width = {ericson_width(t, d):.4f}")

n = 1500
specs = [
    CorrelatorSpec([((0, 1), 0.0)], [((0, 1), 0.0)], n_samples=n, seed=1, name="off-diagonal"),
    CorrelatorSpec([((0, 0), 0.0)], [((0, 0), 0.0)], n_samples=n, seed=1, name="diagonal"),
    CorrelatorSpec([((0, 1), 0.0), ((2, 3), 0.0)], [((0, 1), 0.0), ((2, 3), 0.0)], n_samples=n, seed=1, name="(2,2)"),
    CorrelatorSpec([((0, 0), 0.0), ((1, 1), 0.0)], [((0, 0), 0.0)], n_samples=n, seed=1, name="(2,1)"),
]
for sp, e in zip(specs, estimate_correlators(sys, specs)):
    pred = ericson_pq(sp.entries_p, sp.entries_q, t, d, sys.rho_diag)
    print(f"  {sp.name:<13} MC {e.mean.real:+.4f} +- {e.stderr_re:.4f}   closed form {pred.real:+.4f}")

print("two-point closed form at zero offset:", ericson_two_point(t, d, 0, 0, (0, 1, 0, 1)))

# fourth over squared second moment: 2 for a complex Gaussian, a bit less at ten channels
rep = distribution_report(sys, [(0, 1), (2, 3), (4, 5)], n, seed=2)
print(f"<|S|^4>/<|S|^2>^2 = {rep.ratio:.3f} +- {rep.ratio_stderr:.3f}")

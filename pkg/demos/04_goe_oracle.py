"""
Comparing with random-matrix theory
===================================

A GOE Hamiltonian coupled to two channels is calibrated to the same
transmission coefficients as a graph.  Offsets are measured in mean level
spacings on the GOE side and mapped to wave number through the graph's mean
level density.
"""

import numpy as np

from qgraph import CorrelatorSpec, build_graph, estimate_correlators, goe_calibrate, make_system, mean_level_density
from qgraph.theory import goe_correlators

g = build_graph(20, 2, seed=41)
sys = make_system(g, t_coeff=0.5, seed=41)
d = mean_level_density(g)

model = goe_calibrate([0.5, 0.5], dim=150, seed=0, n_draws=4000)
print("GOE couplings:", np.round(model.couplings, 4), " measured |<S>|^2:", np.round(model.calibration["measured_rho2"], 3))

xs = np.array([0.0, 1.0, 2.0, 4.0])
gs = [CorrelatorSpec([((0, 1), x / (4 * np.pi * d))], [((0, 1), x / (4 * np.pi * d))], n_samples=4000, seed=1) for x in xs]
os_ = [CorrelatorSpec([((0, 1), x / (4 * np.pi))], [((0, 1), x / (4 * np.pi))], n_samples=1500, seed=2) for x in xs]
for x, a, b in zip(xs, estimate_correlators(sys, gs), goe_correlators(model, os_)):
    z = a.z_score(b.mean, complex(b.stderr_re, b.stderr_im))
    print(f"  x={x:3.1f}  graph {a.mean.real:+.4f}{a.mean.imag:+.4f}i   GOE {b.mean.real:+.4f}{b.mean.imag:+.4f}i   |z|={z:.2f}")

"""
Building a quantum graph and scattering off it
==============================================

A complete graph with six vertices, two of them attached to leads.  We
assemble the bond scattering matrix, evaluate the exact S-matrix at one
draw of bond phases, and rebuild it from the trajectory expansion.
"""

import numpy as np

from qgraph import build_graph, evaluate_s, make_system, mean_level_density, trajectory_sum
from qgraph.correlators import sample_phases
from qgraph.propagator import spectral_radius

g = build_graph(6, 2, length_range=(1.0, 2.0), seed=1)
print(f"{g.num_bonds} bonds, {g.num_directed} directed bonds, leads on vertices {g.leads}")
print("lengths:", np.round(g.lengths, 3))
print(f"mean level density {mean_level_density(g):.4f}")

# canonical lead vertices with T = 0.8 and 1.0, designed interior vertices
sys = make_system(g, t_coeff=[0.8, 1.0], seed=1)
print("transmissions:", sys.transmissions)

# Sigma Sigma^dagger is the identity up to one eigenvalue 1 - T per lead
ev = np.sort(np.linalg.eigvalsh(sys.sigma_b @ sys.sigma_b.conj().T))
print("smallest eigenvalues of Sigma Sigma^+:", np.round(ev[:3], 12))

phases = sample_phases(g, seed=0)
s = evaluate_s(sys, phases).s
print("S =\n", np.round(s, 4))
print(f"unitarity defect {np.abs(s.conj().T @ s - np.eye(2)).max():.1e}, asymmetry {np.abs(s - s.T).max():.1e}")

# the S-matrix as a sum over trajectories; convergence is set by the spectral radius
r = spectral_radius(sys, phases)
res = trajectory_sum(sys, phases, n_max=4000)
for n in (10, 100, 1000, 4000):
    print(f"  {n:5d} terms: residual {res.residuals[n]:.2e}   r^n = {r**n:.2e}")

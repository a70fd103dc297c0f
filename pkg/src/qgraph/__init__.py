"""Simulation of chaotic scattering on open quantum graphs.

Modules
-------
graph        topology, bond lengths, leads and directed-bond indexing
vertex       unitary symmetric vertex scattering matrices
propagator   bond-space assembly, exact S-matrix, trajectory expansion
correlators  phase-average Monte Carlo for S-matrix correlation functions
theory       closed-form Ericson-regime predictions and the GOE oracle
runner       experiment configs, artifact directories, verification suites
"""

from .correlators import (
    CorrelatorEstimate,
    CorrelatorSpec,
    distribution_report,
    estimate_correlator,
    estimate_correlators,
    estimate_mean_s,
    mean_s_analytic,
    sample_phases,
)
from .graph import DirectedBond, GraphError, GraphSpec, build_graph, mean_level_density
from .propagator import (
    ScatteringSystem,
    SMatrixSample,
    assemble_system,
    classical_map_gap,
    evaluate_s,
    make_system,
    make_vertices,
    s_matrix_batch,
    trajectory_sum,
)
from .theory import (
    EricsonPrediction,
    GoeModel,
    ericson_f_factor,
    ericson_pq,
    ericson_two_point,
    ericson_width,
    goe_calibrate,
    goe_sample_s,
)
from .vertex import (
    VertexMatrix,
    build_canonical_vertex,
    build_designed_vertex,
    build_kirchhoff_vertex,
    validate_vertex,
)

__version__ = "0.1.0"

"""Topology-preserving multi-robot control under limited fields of view.

Modules
-------
digraph              directed graphs, incidence matrices and the stability certificate
fov_potentials       triangular field of view, barrier and quality potentials
adaptive_controller  gain-weighted control law and the adaptive gain dynamics
resilience           fault injection, fault-estimating observer and its certificate
qlearning            RLS policy-iteration learning of the pairwise gains
simkit               scenario files, simulation runs, CSV/SVG output and the CLI
"""

__version__ = "0.1.0"

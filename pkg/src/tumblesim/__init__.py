"""Contact-implicit dynamics for magnetically actuated tumbling microrobots.

The package couples a semismooth Newton solver for mixed nonlinear
complementarity problems (``mncp``) with a convex-body contact model
(``geometry``, ``contact``) and a velocity-level time stepper that treats
contact points, gaps and impulses as simultaneous unknowns (``dynamics``).
Scenario drivers for locomotion sweeps, incline traversal and shape studies
live in ``scenarios``; configuration parsing, result serialization and the
command line in ``io`` and ``cli``.
"""

__version__ = "0.1.0"

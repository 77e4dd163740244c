"""yansql: rewrite SQL join queries into staged Yannakakis-style plans.

Pipeline: parse -> conjunctive query -> hypergraph -> join tree (Flat-GYO)
or width-bounded hypertree decomposition -> 0MA classification -> staged
plan IR -> dialect SQL.  An in-memory bag-semantics engine executes plans
and serves as the brute-force oracle for verification.
"""

from .errors import YansqlError

__all__ = ["YansqlError"]
__version__ = "0.1.0"

"""Generalized-Durbin estimation and specification testing for SUR systems.

Submodules
----------
numerics
    Linear-algebra kernels, splittable RNG streams, reference distributions.
dgp
    Block-VAR data-generating processes and their analytic moments.
estimators
    OLS and the feasible-GLS family (CO, Durbin-filtered, transformed
    system) with BIC lag selection and bootstrap bias correction.
inference
    Wald, restricted projection, GRS, and fixed-b HAR tests.
bootstrap
    VAR-sieve resampling and the fast double bootstrap Wald test.
montecarlo
    Reproducible accuracy and size/power experiment harness.
io / cli
    CSV and JSON plumbing plus the command-line front end.
"""

__version__ = "0.1.0"

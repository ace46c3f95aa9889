"""Active learning of demonstration-based control policies.

Bayesian Gaussian mixture policies over joint state-action data, closed-form
epistemic uncertainty via the quadratic Renyi entropy, information-density
query selection, product-of-experts control fusion, and a 2D reaching
simulator with scripted and live teachers.
"""

from .gaussians import (
    GMM,
    Gaussian,
    StudentTComponent,
    StudentTMixture,
    gaussian_condition,
    gaussian_product,
    gmm_log_density,
    gmm_sample,
    moment_match_t,
    renyi2_entropy,
    renyi2_entropy_quadrature,
)

__version__ = "0.1.0"

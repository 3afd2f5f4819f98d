"""Shared fixture: a Gaussian prior times Gaussian likelihood target."""

import numpy as np

from fsm_mcmc.targets import (
    GaussianPriorDecomposition,
    TargetModel,
    equicorrelated_covariance,
    gaussian_target,
)


def conjugate_target(dim=2, rho=0.3, lik_mu=0.5, lik_var=0.5):
    """Target with Gaussian-prior split and a closed-form posterior.

    Returns just the target; ``conjugate_posterior`` gives the moments.
    """
    prior_cov = equicorrelated_covariance(dim, rho)
    lik = gaussian_target(np.full(dim, lik_mu),
                          np.linalg.cholesky(lik_var * np.eye(dim)))
    return TargetModel(
        name="conjugate",
        dim=dim,
        log_density=lambda x: 0.0,
        gaussian_prior=GaussianPriorDecomposition(
            chol=np.linalg.cholesky(prior_cov),
            residual_log_density=lik.log_density,
        ),
    )


def conjugate_posterior(dim=2, rho=0.3, lik_mu=0.5, lik_var=0.5):
    prior_cov = equicorrelated_covariance(dim, rho)
    lik_cov = lik_var * np.eye(dim)
    post_cov = np.linalg.inv(np.linalg.inv(prior_cov) + np.linalg.inv(lik_cov))
    post_mu = post_cov @ np.linalg.solve(lik_cov, np.full(dim, lik_mu))
    return post_mu, post_cov

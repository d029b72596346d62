"""topical-gibbs: Bayesian multilevel multinomial-logistic regression over
sparse binary variants with an embedded supervised topic model, fitted by a
doubly data-augmented Metropolis-within-Gibbs sampler."""

__version__ = "0.1.0"

"""High-dimensional GLMs: lasso fits, projection directions and debiased dissimilarities."""

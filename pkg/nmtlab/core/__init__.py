"""Numerical core of nmtlab: autodiff, parameters, encoder, decoder, model."""

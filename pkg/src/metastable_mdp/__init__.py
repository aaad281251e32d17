"""Controlled Kawasaki dynamics as a Markov decision process over rectangular clusters."""

__version__ = "1.0.0"

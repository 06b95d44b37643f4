"""Differentiable core, descriptor network, gated optimal transport and losses."""

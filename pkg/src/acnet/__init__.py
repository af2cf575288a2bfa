"""Auxiliary-caption video grounding."""

"""Test problems and experiment drivers."""

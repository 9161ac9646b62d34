"""Test suite for dpmis."""

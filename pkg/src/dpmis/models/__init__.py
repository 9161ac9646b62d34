"""Pydantic models for configuration and result validation."""

"""Slice-level traffic forecasting and scaling-policy toolkit."""

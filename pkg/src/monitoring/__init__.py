"""Prometheus metrics for solver telemetry"""

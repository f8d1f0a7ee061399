"""Empirical measures, Wasserstein distance and environment flows"""

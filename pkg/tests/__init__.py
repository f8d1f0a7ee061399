"""Test suite for FBSDE Lab"""

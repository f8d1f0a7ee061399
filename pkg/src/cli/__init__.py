"""Experiment runner, replay and acceptance suite"""

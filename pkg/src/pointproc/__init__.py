"""Marked point processes with stochastic intensity"""

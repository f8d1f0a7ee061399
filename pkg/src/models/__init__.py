"""Model builders: linear-quadratic, Hamiltonian, one-way oracle and regime chains"""

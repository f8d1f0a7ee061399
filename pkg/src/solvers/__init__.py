"""Forward, backward and coupled solvers on shared path bundles"""

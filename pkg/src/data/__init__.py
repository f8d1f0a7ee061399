"""Run configuration contracts, synthetic environments, artifact storage and the check ledger"""

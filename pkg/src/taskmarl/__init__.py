"""Attention-driven task selection for cooperative multi-agent RL."""

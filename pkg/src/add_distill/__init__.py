"""Attention-based depth distillation toolkit."""

"""dialogweave: synthesize fused task/chitchat dialog corpora, train and
run mode-switching dialog models, and evaluate them end to end."""

__version__ = "0.1.0"

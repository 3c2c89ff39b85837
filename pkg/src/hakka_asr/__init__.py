"""Desk-scale Hakka ASR toolkit: features, multistream TDNN-F chain models
with discriminative-autoencoder objectives, LM rescoring and error scoring."""

__version__ = "0.1.0"

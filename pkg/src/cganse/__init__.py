"""Spectrogram-domain speech enhancement with a conditional GAN, classical and
DNN baselines, and an intelligibility / speaker-verification evaluation stack."""

__version__ = "0.1.0"

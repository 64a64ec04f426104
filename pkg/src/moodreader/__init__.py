"""Multimodal cross-subject EEG emotion recognition: DE features, masked brain-signal
pretraining, interlinked spatial-temporal attention and multi-level fusion."""

__version__ = "0.1.0"

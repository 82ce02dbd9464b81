"""Multi-task multimodal semantic communication with split federated fine-tuning."""

__version__ = "0.1.0"

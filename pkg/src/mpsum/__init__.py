"""Extractive review summarization with a selective state-space encoder,
Poincaré-ball cluster compression and a batch-normalized linear head."""
from importlib import resources

from .checkpoint import Checkpoint
from .config import LoraConfig, RunConfig
from .ssm import EncoderConfig

__version__ = "0.1.0"

__all__ = ["Checkpoint", "EncoderConfig", "LoraConfig", "RunConfig", "fixture_path",
           "fixture_config_path"]


def fixture_path():
    """Path of the bundled 40-review synthetic fixture."""
    return resources.files(__name__) / "data" / "fixture.jsonl"


def fixture_config_path():
    """Hyperparameter overrides that suit the fixture (see README)."""
    return resources.files(__name__) / "data" / "fixture_config.json"

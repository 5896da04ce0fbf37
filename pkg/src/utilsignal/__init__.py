"""Reliable and private utility signaling for data markets."""
from .datasets import Table, canonical_bytes, read_csv
from .market import MarketModel
from .sharing import Session, SharedVec
from .signaling import SignalingConfig, commit_stage, sign_mali, sign_semi
from .transport import ProtocolAbort

__all__ = ["MarketModel", "ProtocolAbort", "Session", "SharedVec", "SignalingConfig", "Table",
           "canonical_bytes", "commit_stage", "read_csv", "sign_mali", "sign_semi"]
__version__ = "0.1.0"

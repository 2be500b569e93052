"""Learned policies: flat, hierarchical and chain-of-action."""

from chainact.policy.features import FEATURE_DIM, FormatPrompt, coa_prompt, featurize, high_level_only
from chainact.policy.models import (
    FlatPolicy,
    HighLevelPolicy,
    LowLevelDecoder,
    PolicyConfig,
    UnifiedCoA,
    VQStreamDecoder,
    act_flat,
    coa_step,
    decode_low,
    log_joint,
    marginal_log_prob,
    sample_abstracted,
)
from chainact.policy.train import StageConfig, train_all_in_one, train_bc, train_curriculum

__all__ = [
    "FEATURE_DIM", "FormatPrompt", "coa_prompt", "featurize", "high_level_only", "FlatPolicy",
    "HighLevelPolicy", "LowLevelDecoder", "PolicyConfig", "UnifiedCoA", "VQStreamDecoder", "act_flat",
    "coa_step", "decode_low", "log_joint", "marginal_log_prob", "sample_abstracted", "StageConfig",
    "train_all_in_one", "train_bc", "train_curriculum",
]

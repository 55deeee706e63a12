"""Key-gated recurrent networks with embedded ownership signatures and trigger sets."""
from .attacks import AttackReport, finetune_attack, flip_signs, overwrite_attack, prune_global_l1
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import Dataset, generate_synthetic_text, load_idx, load_trec_tsv, split_dataset
from .model import SequenceModel
from .numeric import Adam, Rng
from .signature import Key, Signature, decode_signature, encode_signature, generate_key, sign_loss
from .training import TrainConfig, build_trigger_set, evaluate, fit, train_private_step, train_public_step
from .verification import (SecrecyReport, VerificationReport, binomial_tail, counterfeit_study, gate_histogram,
                           secrecy_check, verify_blackbox_pvalue, verify_whitebox)

__version__ = "0.1.0"

import os

import numpy as np
import pytest

from dsrpgo import data
from dsrpgo.trainer import Schedule, CodecConfig

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

# small widths keep training-based tests fast without changing behavior
TINY_CODEC = dict(token_width=8, n_tokens=2, latent=16, seq_blocks=2)


@pytest.fixture(scope="session")
def fixture_dir():
    return os.path.join(FIXTURES, "dataset8")


@pytest.fixture(scope="session")
def fixture_ds(fixture_dir):
    return data.load_dataset(fixture_dir)


@pytest.fixture(scope="session")
def pretrain_corpus():
    """16-protein noise-0.2 corpus used by the pretraining criteria."""
    spec = data.SynthSpec(n_proteins=16, n_terms=4, n_clusters=2,
                          n_attributes=12, embed_width=16, noise=0.2, seed=3)
    ds = data.synth_dataset(spec)
    ds, _ = data.split_dataset(ds, (1.0, 0.0, 0.0), seed=0)
    return ds


@pytest.fixture(scope="session")
def overfit_task():
    """64-protein / 8-term / noise-0.3 task used by the end-to-end criteria."""
    spec = data.SynthSpec(n_proteins=64, n_terms=8, n_clusters=8,
                          n_attributes=24, embed_width=32, noise=0.3, seed=5)
    ds = data.synth_dataset(spec)
    ds, _ = data.split_dataset(ds, (0.8, 0.1, 0.1), seed=0)
    return ds


def tiny_codec_cfg():
    return CodecConfig(**TINY_CODEC)


def tiny_pretrain_schedule(epochs=200, seed=0):
    half = epochs // 2
    return Schedule("pretrain", half, 1e-3, epochs - half, 1e-4,
                    dropout=0.1, seed=seed)


def tiny_finetune_schedule(epochs=200, seed=0):
    half = epochs // 2
    return Schedule("finetune", half, 1e-3, epochs - half, 1e-4,
                    dropout=0.1, seed=seed)

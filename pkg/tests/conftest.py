import numpy as np
import pytest

from dualrec.augment import offline_paraphrase
from dualrec.catalog import generate_catalog
from dualrec.model import Model, ModelConfig
from dualrec.prompts import TRIGGERS, PromptRegistry, PromptTemplate, split_prompts
from dualrec.train import build_tokenizer


def make_registry(n_per_group=10, n_seen=7, n_zero=2, seed=0):
    """Trigger templates plus offline paraphrases, split seen/zeroshot."""
    reg = PromptRegistry()
    for (family, group), texts in sorted(TRIGGERS.items()):
        for t in texts:
            reg.add(PromptTemplate(family=family, group=group, text=t))
        accepted = []
        for t_i, trigger in enumerate(texts):
            want = n_per_group - len(accepted)
            if want <= 0:
                break
            batch = offline_paraphrase(
                trigger, min(want, -(-n_per_group // len(texts))),
                seed=seed * 1000 + group * 100 + t_i,
            )
            accepted.extend(batch.accepted)
        for text in accepted[:n_per_group]:
            reg.add(PromptTemplate(family=family, group=group, text=text, origin="generated"))
    split_prompts(reg, n_seen, n_zero, seed=seed)
    return reg


@pytest.fixture(scope="session")
def small_catalog():
    return generate_catalog(seed=0, n_users=8, n_items=20, n_interactions_per_user=5)


@pytest.fixture(scope="session")
def small_registry():
    return make_registry()


@pytest.fixture(scope="session")
def small_tokenizer(small_catalog, small_registry):
    return build_tokenizer(small_catalog, small_registry)


@pytest.fixture(scope="session")
def tiny_config(small_tokenizer):
    return ModelConfig(
        n_layers=1,
        d_m=16,
        n_heads=2,
        vocab_size=small_tokenizer.size,
        max_id_len=32,
        max_nl_len=64,
        max_target_len=16,
        ff_mult=2,
    )


@pytest.fixture()
def tiny_model(tiny_config):
    return Model.create(tiny_config, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)

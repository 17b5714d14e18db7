"""Train a miniature model end to end and watch the losses move.

Builds a 6-user catalog, a small prompt registry (trigger templates plus
offline paraphrases), and a 1-layer model, then runs a short training loop
and prints the history table followed by a few greedy generations.
"""

from dualrec.augment import offline_paraphrase
from dualrec.catalog import generate_catalog
from dualrec.model import Model, ModelConfig, build_visible_matrix
from dualrec.prompts import TRIGGERS, PromptRegistry, PromptTemplate, split_prompts
from dualrec.train import TrainConfig, build_tokenizer, make_examples, train


def build_registry(n_per_group=6, n_seen=4, n_zeroshot=2, seed=0):
    reg = PromptRegistry.from_triggers()
    for (family, group), texts in sorted(TRIGGERS.items()):
        batch = offline_paraphrase(texts[0], n_per_group, seed=seed + group)
        for text in batch.accepted[:n_per_group]:
            reg.add(PromptTemplate(family=family, group=group, text=text, origin="generated"))
    split_prompts(reg, n_seen, n_zeroshot, seed=seed)
    return reg


def main():
    catalog = generate_catalog(0, n_users=6, n_items=15, n_interactions_per_user=4)
    registry = build_registry()
    tokenizer = build_tokenizer(catalog, registry)

    config = TrainConfig(
        total_steps=20, gen_batch_size=3, hfm_pairs_per_step=1,
        icl_anchors_per_step=1, k_negatives=3, m_negatives=2,
        icl_max_gen_len=3, seed=0,
    )
    model_config = ModelConfig(
        n_layers=1, d_m=16, n_heads=2, vocab_size=tokenizer.size,
        max_id_len=32, max_nl_len=64, max_target_len=16, ff_mult=2,
    )
    model = Model.create(model_config, seed=0)
    model, history, _ = train(config, catalog, registry, model, tokenizer)

    print("step   lr        lambda3  gen     hfm     icl     total")
    for row in history[::2]:
        print(
            f"{row['step']:4d}  {row['lr']:.2e}  {row['lambda3']:.3f}  "
            f"{row['gen']:6.3f}  {row['hfm']:6.3f}  {row['icl']:6.3f}  {row['total']:6.3f}"
        )

    print("\nsample generations after training:")
    templates = registry.by_family("rating", split="seen")
    for ex in make_examples(catalog, "rating", templates, tokenizer, seed=1)[:3]:
        vm = build_visible_matrix(ex.spans, len(ex.id_tokens))
        enc_id = model.encode(ex.id_tokens, vm)
        enc_nl = model.encode(ex.nl_tokens)
        seq, _ = model.generate_greedy(enc_id, enc_nl, max_len=6)
        gold = tokenizer.decode(ex.target_tokens)
        print(f"  gold {gold!r:8} -> model {tokenizer.decode(seq)!r}")


if __name__ == "__main__":
    main()

# %% [markdown]
# # Training the quadruple encoder and answering analogy questions
#
# The encoder is trained with the double-margin loss, then each question
# `I1 : I2 :: I3 : ?` is answered by ranking candidates on the cosine between
# the pair embeddings of `(I1, I2)` and `(I3, candidate)`.

# %%
import numpy as np

from analogylab.corpus import CorpusSpec, generate_corpus, make_splits, random_split_spec
from analogylab.model import Hyperparams, init_encoder, pretrain_classifier, train
from analogylab.retrieval import build_questions, chance_recall, corpus_features, evaluate, write_recall_svg

STEPS = 5000  # about 90 s on one core

corpus = generate_corpus(CorpusSpec())
splits = make_splits(corpus, random_split_spec(corpus.spec, 2, 6, test_exemplars=2, seed=0))

params, log = train(splits, Hyperparams(steps=STEPS, seed=0))
print("first / last loss", log[0].loss, log[-1].loss)
print("pos / neg distance at end", log[-1].pos_dist_mean, log[-1].neg_dist_mean)

# %% baselines: untrained encoder and a property classifier
arms = {
    "double margin": params,
    "classifier": pretrain_classifier(splits, seed=0),
    "random init": init_encoder(seed=0),
}
feats = {name: corpus_features(corpus, p, splits.channel_means) for name, p in arms.items()}

# %%
rng = np.random.default_rng(0)
questions = {
    "seen": build_questions(splits, "seen", 1000, 100, rng),
    "unseen types": build_questions(splits, "unseen", 1000, 100, rng),
}
ks = [1, 2, 5, 10, 20, 50]
for regime, qs in questions.items():
    curves = {name: evaluate(f, qs, ks) for name, f in feats.items()}
    curves["chance"] = evaluate(None, qs, ks, rng=np.random.default_rng(1))
    for name, c in curves.items():
        print(f"{regime:12s} {name:14s}", np.round(c.recall, 3))
    write_recall_svg(curves, f"recall_{regime.replace(' ', '_')}.svg", title=regime)

print("exact chance r@10 with two positives:", chance_recall(10, 100, 2))

# %% [markdown]
# # Glyph corpus and analogy quadruples
#
# Categories are glyph shapes, properties are either a hue or a rotation.
# A positive quadruple takes two properties of one glyph and the same two
# properties of another glyph.

# %%
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from analogylab.corpus import CorpusSpec, generate_corpus, make_splits, random_split_spec
from analogylab.quadruples import Pool, count_positive_analogies, sample_batch

spec = CorpusSpec()
corpus = generate_corpus(spec)
print(len(corpus), "images,", spec.hue_count, "hue properties,", spec.num_properties - spec.hue_count, "rotations")

# %% one exemplar per (category, property) cell
fig, axes = plt.subplots(spec.num_categories, spec.num_properties, figsize=(8, 12))
for c in range(spec.num_categories):
    for p in range(spec.num_properties):
        ax = axes[c, p]
        ax.imshow(corpus.pixels[corpus.index(c, p, 0)].transpose(1, 2, 0))
        ax.set_axis_off()
fig.savefig("corpus_grid.png", dpi=80)

# %% [markdown]
# Two categories and two unseen-in-training analogy types are withheld.
# Two exemplars per cell are kept back for evaluation.

# %%
splits = make_splits(corpus, random_split_spec(spec, n_unseen_categories=2, n_heldout_types=6, test_exemplars=2, seed=0))
print("train", splits.train.size, "test", splits.test.size, "unseen", splits.unseen.size)
print("unseen categories", splits.unseen_categories)
print("analogy types available for training:",
      count_positive_analogies(len(splits.seen_categories), spec.num_properties) - len(splits.heldout_types))

# %% a batch: half positive, the negatives split between random and hard
pool = Pool.from_corpus(corpus, splits.train)
batch = sample_batch(np.random.default_rng(0), pool, 8, registry=splits.heldout_types)
for q in batch:
    print(q.y, pool.quad_labels(q))

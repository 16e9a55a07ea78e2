# %% [markdown]
# # Single vs double margin, two fine-tuning depths
#
# Every arm sees the same corpus, splits, question sets and seeds; only the
# loss and the frozen layers change. Full settings take roughly 25 minutes.

# %%
from analogylab.model import Hyperparams
from analogylab.retrieval import AblationConfig, run_ablation, write_ablation_svg

config = AblationConfig(hyper=Hyperparams(steps=5000), seeds=(0, 1, 2), n_questions=1000)
report = run_ablation(config, progress=print)

# %%
for regime in config.regimes:
    for lm in config.loss_modes:
        for fm in config.freeze_modes:
            print(f"{regime:6s} {lm:6s} {fm:17s} r@10 = {report.mean_recall(regime, lm, fm, 10):.3f}")
write_ablation_svg(report, "ablation.svg")

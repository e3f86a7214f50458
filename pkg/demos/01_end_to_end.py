# %% [markdown]
# # Pretrain, compress, train, evaluate
#
# A synthetic log stands in for MovieLens. We pretrain matrix factorization
# on the full training split, keep 10% of the rows, and train a two-tower
# model on that 10% with and without the pretrained id tables.

# %%
import numpy as np

from cadc import (IntegrationStrategy, MfConfig, TtnnConfig, build_ttnn, evaluate, export_embeddings,
                  sample_uniform, split_leave_last_two, train_mf, train_ttnn)
from cadc.synthetic import latent_factor_log

data = latent_factor_log(n_users=300, n_items=200, per_user=25, seed=0)
split = split_leave_last_two(data)
print(data.n_users, "users,", data.n_items, "items,", len(split.train), "training rows")

# %% MF sees everything once; that is where the interaction signal lives
mf = train_mf(split.train, data, MfConfig(dim=32, epochs=20, lr=1e-2, seed=0))
print("MF on its own:", evaluate(mf, split))
user_table, item_table = export_embeddings(mf)

# %% the compressed training set
subset = sample_uniform(split.train, 0.1, seed=0)
print(len(subset), "rows kept")

cfg = TtnnConfig(emb=32, epochs=20, lr=1e-2, seed=0)
for kind in ("random", "init-frz"):
    st = IntegrationStrategy(kind) if kind == "random" else IntegrationStrategy(kind, user_table, item_table)
    model, seconds = train_ttnn(build_ttnn(data, st, cfg), subset, data, cfg)
    rep = evaluate(model, split)
    print(f"{kind:9s} HR@10 {rep.hr_at_10:5.1f}  NDCG@10 {rep.ndcg_at_10:5.1f}  ({seconds:.1f}s)")

# %% reference: the same tower trained on all of the training rows
model, seconds = train_ttnn(build_ttnn(data, IntegrationStrategy("random"), cfg), split.train, data, cfg)
print("all rows  ", evaluate(model, split), f"{seconds:.1f}s")

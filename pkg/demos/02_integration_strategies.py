# %% [markdown]
# # Ways to hand pretrained tables to the towers
#
# Same data, same 10% sample, six ways of building the id embeddings:
# fresh Xavier tables, frozen copies, trainable copies, a 64/32 frozen/free
# split, and frozen copies fed through a linear or MLP adapter.

# %%
from cadc import (IntegrationStrategy, MfConfig, TtnnConfig, build_ttnn, evaluate, export_embeddings,
                  sample_uniform, split_leave_last_two, train_mf, train_ttnn)
from cadc.synthetic import latent_factor_log

data = latent_factor_log(n_users=300, n_items=200, per_user=25, seed=1)
split = split_leave_last_two(data)
tables = export_embeddings(train_mf(split.train, data, MfConfig(epochs=20, lr=1e-2, seed=1)))
subset = sample_uniform(split.train, 0.1, seed=1)

# %%
cfg = TtnnConfig(epochs=20, lr=1e-2, seed=1)
for kind in ("random", "init-frz", "init", "hybrid", "linear", "mlp"):
    st = IntegrationStrategy(kind) if kind == "random" else IntegrationStrategy(kind, *tables)
    model = build_ttnn(data, st, cfg)
    n_train = sum(p.size for p in model.parameters().values())
    model, _ = train_ttnn(model, subset, data, cfg)
    rep = evaluate(model, split)
    print(f"{kind:9s} frozen cols {model.frozen_columns:3d}  trainable {n_train:7d}  "
          f"HR@10 {rep.hr_at_10:5.1f}  NDCG@10 {rep.ndcg_at_10:5.1f}")

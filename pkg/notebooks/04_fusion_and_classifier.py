"""
Fusing embeddings with axle semantics
=====================================

Every strategy picks a subset of blocks: the signal embedding (S), the
wheel count, the wheel times or the strain at each wheel. Starred variants
add the operating context (payload and speed). A boosted tree ensemble is
tuned by random search and scored out of fold.
"""

import numpy as np

from wayside import clf, datagen, embed, fuse

recs = datagen.synthesize_batch(datagen.sample_specs(datagen.SamplingSpec(), 120, seed=2))
windows = [embed.make_window(r.accel) for r in recs]
vae, _ = embed.train_vae(windows, embed.VaeConfig(epochs=30, seed=0))
rep = embed.encode_batch(windows, vae)

for name in ("S-WC", "I-WD", "I-WD*", "S-WD*"):
    ds = fuse.build_dataset(recs, name, "SD", 0.8, representation=rep)
    search = clf.random_search(ds.X, ds.y, n_trials=2, seed=0, k=3)
    folds = clf.stratified_folds(ds.y, 3, np.random.default_rng(0))
    proba = clf.cross_val_predict(ds.X, ds.y, search.best_config, folds)
    m = clf.score_metrics(proba, ds.y)
    print("%-6s %3d features  accuracy %.3f  auc %.3f" % (name, ds.X.shape[1], m["accuracy"],
                                                         m["auc_roc"]))

"""
Compressing accelerometer windows with a VAE
============================================

Windows are block-RMS resampled to 1024 samples and z-normalized. The
encoder gives a mean and a log-variance per latent dimension; the two are
concatenated into the 40-value embedding used downstream.
"""

import numpy as np

from wayside import datagen, embed

recs = datagen.synthesize_batch(datagen.sample_specs(datagen.SamplingSpec(), 120, seed=1))
windows = [embed.make_window(r.accel) for r in recs]

# gradients first: backprop against central differences on a tiny net
small = embed.init_vae(6, 2, (4,), seed=0)
x = np.random.default_rng(0).normal(size=(3, 6))
print("gradient check on a tiny net: %.1e" % embed.gradient_check(small, x))

params, hist = embed.train_vae(windows, embed.VaeConfig(epochs=30, seed=0))
print("validation loss %.1f -> %.1f" % (hist.val_initial, hist.val[-1]))

Z = embed.encode_batch(windows, params)
y = np.array([r.truth.is_anomalous for r in recs])
print("embedding shape:", Z.shape)
gap = np.linalg.norm(Z[y].mean(axis=0) - Z[~y].mean(axis=0))
print("distance between class centroids in embedding space: %.3f" % gap)

H = np.stack([embed.handcrafted_features(w) for w in windows])
print("handcrafted baseline features:", H.shape[1])

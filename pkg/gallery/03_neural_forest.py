"""
Training a soft neural forest
=============================

Soft trees route each sample with sigmoids, so the augmented Gini becomes
differentiable. Training mixes it with cross-entropy on the labeled data.
The learning rates below suit this small benchmark.
"""

import numpy as np

from lacforest import TrainConfig, accuracy, benchmark_split, train_neural

sp = benchmark_split(seed=1, theta=0.5)
cfg = TrainConfig(epochs=200, batch_l=128, batch_u=128, lambda_ce=1.0, lr_init=1.0, lr_final=0.1, seed=1)
model, log = train_neural(sp.S_l, sp.S_u, theta=0.5, cfg=cfg, m=3, depth=4)

# loss every 40 epochs
for e in log[::40] + [log[-1]]:
    print(f"epoch {e.epoch:3d}  L_ag {e.loss_ag:.4f}  CE {e.loss_ce:.4f}  total {e.total:.4f}  lr {e.lr:.3f}")

pred = model.predict(sp.S_test.X)
print("test accuracy:", accuracy(pred, sp.S_test.y))
print("predicted augmented share:", np.mean(pred == model.kappa + 1))

"""
Training an age slider
======================

A slider is a set of rank-4 adapters on the attention projections of a
frozen text encoder.  Training pulls the adapted encoding of ``"person"``
toward the base encoding shifted by ``old - young``, measured once with each
preserved concept attached.
"""

import numpy as np

from textslider import EncoderConfig, PromptSpec, TrainConfig, init_encoder, train_slider
from textslider.gradcheck import toy_vocab

vocab = toy_vocab()
encoder = init_encoder(EncoderConfig(vocab_size=256, max_len=16, d_model=32, n_heads=4, n_layers=2, seed=0))
print("encoder parameters:", encoder.n_parameters())

spec = PromptSpec(
    target="person",
    positive="person, old",
    negative="person, young",
    preserved=[["male", "female"]],
)

# 500 AdamW steps at lr 2e-4, weight decay 0.01
result = train_slider([encoder], vocab, spec, TrainConfig())
hist = np.array(result.loss_history)
print("loss at epochs 1, 100, 500:", hist[0], hist[99], hist[-1])
print("best-so-far curve never rises:", np.all(np.diff(np.minimum.accumulate(hist)) <= 0))

###############################################################################
# The trained adapters and their training header travel together in one file.

result.artifact.save("age.tsl")
print(result.artifact.metadata()["rank"], result.artifact.metadata()["target_layers"][0])

###############################################################################
# The final layernorm has unit gain and zero bias and is not trained, so every
# output row lies in a zero-mean ball of radius sqrt(d).  Part of the target
# sits outside that ball, which puts a floor under the loss.

from textslider.evaluation import layernorm_loss_floor

floor = layernorm_loss_floor(result.targets[0][0], eos_pos=2)
print(f"final loss {result.final_loss:.4f}, floor {floor:.4f}")

"""
Applying and combining sliders
==============================

At inference the adapter update is scaled by a multiplier.  Several sliders
can be stacked; their low-rank terms are summed per projection.
"""

import numpy as np

from textslider import ConditioningRequest, EncoderConfig, PromptSpec, TrainConfig, condition, init_encoder, train_slider
from textslider.gradcheck import toy_vocab
from textslider.lora import compose

vocab = toy_vocab()
encoder = init_encoder(EncoderConfig(vocab_size=256, max_len=16, seed=0))

age = PromptSpec("person", "person, old", "person, young", [["male", "female"]])
smile = PromptSpec("person", "person, smiling, happy face", "person, frowning, sad", [["male", "female"]])
age_slider = train_slider([encoder], vocab, age, TrainConfig(epochs=60, learning_rate=1e-2)).artifact
smile_slider = train_slider([encoder], vocab, smile, TrainConfig(epochs=60, learning_rate=1e-2, seed=1)).artifact

base = condition(ConditioningRequest("person, male"), [encoder], vocab)[0].pooled.data
for alpha in (-0.4, 0.0, 0.4):
    out = condition(ConditioningRequest("person, male", [(age_slider, alpha)]), [encoder], vocab)[0]
    print(f"age {alpha:+.1f}: pooled shift {np.linalg.norm(out.pooled.data - base):.4f}")

###############################################################################
# Two sliders at once.  The merged weight of each projection is
# W0 + a * B1 A1 + b * B2 A2, whatever order the sliders are given in.

both = condition(ConditioningRequest("person, male", [(age_slider, 0.3), (smile_slider, 0.2)]), [encoder], vocab)
merged = compose([age_slider.adapter_sets[0], smile_slider.adapter_sets[0]], [0.3, 0.2])
swapped = compose([smile_slider.adapter_sets[0], age_slider.adapter_sets[0]], [0.2, 0.3])
print("order-free:", all(np.array_equal(merged.merged_delta(l), swapped.merged_delta(l)) for l in merged.layer_ids))
print("combined shift:", np.linalg.norm(both[0].pooled.data - base))

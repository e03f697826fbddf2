"""
Sweeping the multiplier
=======================

Without a diffusion model, image metrics are replaced by measurements on the
pooled embedding: how far the target moves along the positive-minus-negative
direction, how well the move lines up with it, and how much prompts carrying
a preserved concept drift.
"""

from textslider import EncoderConfig, PromptSpec, TrainConfig, init_encoder, train_slider
from textslider.evaluation import FIVE_LEVELS, sweep
from textslider.gradcheck import toy_vocab

vocab = toy_vocab()
encoder = init_encoder(EncoderConfig(vocab_size=256, max_len=16, seed=0))
spec = PromptSpec("person", "person, old", "person, young", [["male", "female"]])
slider = train_slider([encoder], vocab, spec, TrainConfig()).artifact

report = sweep(slider, spec, FIVE_LEVELS, [encoder], vocab)
print(report.to_csv())
print("projection grows with alpha:", report.monotone)

import math

import numpy as np
import pytest

from textslider.encoder import (
    EncoderConfig,
    TextEncoder,
    encode_text,
    init_encoder,
    load_encoder,
    parameter_count,
)
from textslider.errors import ConfigurationError, ContractError
from textslider.lora import AdapterSet, LoraAdapter, set_multiplier
from textslider.tensor import Tensor
from textslider.tokenizer import BOS, EOS, TokenSeq, encode


def _states_equal(a: TextEncoder, b: TextEncoder) -> bool:
    return all(np.array_equal(a.weights[k].data, b.weights[k].data) for k in a.weights)


def test_same_seed_bit_identical(toy_config):
    assert _states_equal(init_encoder(toy_config), init_encoder(toy_config))


def test_different_seed_differs(toy_config):
    other = EncoderConfig(**{**toy_config.to_dict(), "seed": 1})
    assert not _states_equal(init_encoder(toy_config), init_encoder(other))


def test_parameter_count_by_hand(toy_encoder):
    # V=256, L=16, d=32, mlp hidden 128, 2 blocks
    emb = 256 * 32 + 16 * 32
    attn = 4 * (32 * 32 + 32)
    lns = 2 * (2 * 32)
    mlp = (32 * 128 + 128) + (128 * 32 + 32)
    expected = emb + 2 * (attn + lns + mlp) + 2 * 32
    assert expected == 34176
    assert toy_encoder.n_parameters() == expected == parameter_count(toy_encoder.config)


def test_init_distribution(toy_encoder):
    w = toy_encoder.weights
    assert abs(float(w["token_embedding"].data.std()) - 0.02) < 1e-3
    assert np.all(w["blocks.0.ln1.gain"].data == 1.0)
    assert np.all(w["final_ln.bias"].data == 0.0)


def test_invalid_config():
    with pytest.raises(ContractError):
        EncoderConfig(vocab_size=64, d_model=30, n_heads=4)
    with pytest.raises(ContractError):
        EncoderConfig(vocab_size=64, max_len=1)


def test_base_weights_are_frozen(toy_encoder):
    assert not any(t.requires_grad for t in toy_encoder.weights.values())


def test_zero_alpha_and_fresh_adapters_are_identities(toy_encoder, vocab, rng):
    seq = encode("person, old, male", vocab, 16)
    base = encode_text(toy_encoder, None, seq)
    fresh = AdapterSet.fresh(toy_encoder.config, seed=3)
    for alpha in (1.0, -2.5, 40.0):
        set_multiplier(fresh, alpha)
        out = encode_text(toy_encoder, fresh, seq)
        assert np.array_equal(out.tokenwise.data, base.tokenwise.data)
    live = {
        lid: [LoraAdapter(lid, Tensor(rng.normal(0, 0.1, t.A.shape)), Tensor(rng.normal(0, 0.1, t.B.shape)))]
        for lid, (t,) in fresh.terms.items()
    }
    live = AdapterSet(live, fresh.encoder_fingerprint, multiplier=0.0)
    assert np.array_equal(encode_text(toy_encoder, live, seq).tokenwise.data, base.tokenwise.data)
    set_multiplier(live, 1.0)
    assert not np.array_equal(encode_text(toy_encoder, live, seq).tokenwise.data, base.tokenwise.data)


def _loop_oracle(w, ids):
    """One block, one head, written out with scalar loops."""
    n, d = len(ids), w["token_embedding"].shape[1]

    def ln(row, g, b):
        mu = sum(row) / d
        var = sum((v - mu) ** 2 for v in row) / d
        return [(row[i] - mu) / math.sqrt(var + 1e-5) * g[i] + b[i] for i in range(d)]

    def lin(row, wt, b):
        return [sum(wt[o][i] * row[i] for i in range(len(row))) + b[o] for o in range(len(wt))]

    g = {k: v.tolist() for k, v in w.items()}
    x = [[g["token_embedding"][ids[p]][i] + g["position_embedding"][p][i] for i in range(d)] for p in range(n)]
    h = [ln(r, g["blocks.0.ln1.gain"], g["blocks.0.ln1.bias"]) for r in x]
    q = [lin(r, g["blocks.0.attn.q.weight"], g["blocks.0.attn.q.bias"]) for r in h]
    k = [lin(r, g["blocks.0.attn.k.weight"], g["blocks.0.attn.k.bias"]) for r in h]
    v = [lin(r, g["blocks.0.attn.v.weight"], g["blocks.0.attn.v.bias"]) for r in h]
    att = []
    for i in range(n):
        scores = [sum(q[i][c] * k[j][c] for c in range(d)) / math.sqrt(d) for j in range(i + 1)]
        top = max(scores)
        e = [math.exp(s - top) for s in scores]
        z = sum(e)
        att.append([sum(e[j] / z * v[j][c] for j in range(i + 1)) for c in range(d)])
    o = [lin(r, g["blocks.0.attn.out.weight"], g["blocks.0.attn.out.bias"]) for r in att]
    x = [[x[p][i] + o[p][i] for i in range(d)] for p in range(n)]
    h = [ln(r, g["blocks.0.ln2.gain"], g["blocks.0.ln2.bias"]) for r in x]
    f = [lin(r, g["blocks.0.mlp.fc1.weight"], g["blocks.0.mlp.fc1.bias"]) for r in h]
    f = [[0.5 * u * (1 + math.erf(u / math.sqrt(2))) for u in r] for r in f]
    f = [lin(r, g["blocks.0.mlp.fc2.weight"], g["blocks.0.mlp.fc2.bias"]) for r in f]
    x = [[x[p][i] + f[p][i] for i in range(d)] for p in range(n)]
    return np.array([ln(r, g["final_ln.gain"], g["final_ln.bias"]) for r in x])


def test_forward_matches_loop_oracle(rng):
    cfg = EncoderConfig(vocab_size=8, max_len=3, d_model=4, n_heads=1, n_layers=1, seed=11)
    enc = init_encoder(cfg)
    # Push biases and gains off their defaults so every term of the oracle matters.
    weights = {}
    for name, t in enc.weights.items():
        arr = t.data.copy()
        arr += rng.normal(0, 0.3 if arr.ndim == 1 else 0.2, arr.shape).astype(np.float32)
        weights[name] = Tensor(arr)
    enc = TextEncoder(cfg, weights)
    seq = TokenSeq((BOS, 5, EOS), 2)
    out = encode_text(enc, None, seq)
    expected = _loop_oracle(enc.state_arrays(), seq.ids)
    assert np.max(np.abs(out.tokenwise.data - expected)) <= 1e-5


def test_causality(toy_encoder, vocab):
    a = encode_text(toy_encoder, None, encode("person, old, male", vocab, 16)).tokenwise.data
    b = encode_text(toy_encoder, None, encode("person, old, female", vocab, 16)).tokenwise.data
    assert np.array_equal(a[:3], b[:3])
    assert not np.array_equal(a[3], b[3])


def test_pooled_is_eos_row(toy_encoder, vocab):
    out = encode_text(toy_encoder, None, encode("person, smiling", vocab, 16))
    assert out.eos_pos == 3
    assert np.array_equal(out.pooled.data, out.tokenwise.data[3])


def test_adapter_layer_mismatch(toy_encoder):
    deep = EncoderConfig(vocab_size=256, max_len=16, n_layers=3)
    adapters = AdapterSet.fresh(deep)
    seq = TokenSeq((BOS, EOS) + (0,) * 14, 1)
    with pytest.raises(ConfigurationError):
        encode_text(toy_encoder, adapters, seq)
    wide = AdapterSet.fresh(EncoderConfig(vocab_size=256, max_len=16, d_model=48))
    with pytest.raises(ConfigurationError):
        encode_text(toy_encoder, wide, seq)


def test_weight_file_round_trip(toy_encoder, tmp_path):
    path = tmp_path / "enc.tslw"
    toy_encoder.save(path)
    back = load_encoder(path)
    assert back.config == toy_encoder.config
    assert _states_equal(back, toy_encoder)
    assert back.to_bytes() == toy_encoder.to_bytes()


def test_init_spec_loads_fresh_encoder(toy_config, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(__import__("json").dumps(toy_config.to_dict()))
    assert _states_equal(load_encoder(f"init:{cfg}"), init_encoder(toy_config))


def test_fingerprint_tracks_config(toy_config):
    assert len(toy_config.fingerprint()) == 16
    assert toy_config.fingerprint() != EncoderConfig(**{**toy_config.to_dict(), "seed": 1}).fingerprint()

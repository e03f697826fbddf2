import numpy as np
import pytest

from textslider import container
from textslider.encoder import encode_text
from textslider.errors import ConfigurationError, ContractError
from textslider.lora import AdapterSet, compose
from textslider.artifact import SliderArtifact
from textslider.runtime import (
    DEFAULT_GATE,
    EDIT_GATE,
    ConditioningRequest,
    GateSchedule,
    condition,
    conditioning_bytes,
    export_conditioning,
    gate_multiplier,
)
from textslider.tokenizer import encode


@pytest.mark.parametrize(
    "t, t_gate, expected",
    [(900, 800, 0.0), (800, 800, 0.3), (801, 800, 0.0), (100, 550, 0.3), (551, 550, 0.0), (0, 800, 0.3)],
)
def test_gate_examples(t, t_gate, expected):
    assert gate_multiplier(GateSchedule(t_gate, 0.3), t) == expected


@pytest.mark.parametrize("t_gate", [DEFAULT_GATE, EDIT_GATE, 0, 1000])
def test_gate_is_a_step_function(t_gate):
    values = [gate_multiplier(GateSchedule(t_gate, -0.7), t) for t in range(0, 1001)]
    assert set(values) <= {0.0, -0.7}
    assert all(v == -0.7 for v in values[: t_gate + 1])
    assert all(v == 0.0 for v in values[t_gate + 1 :])


@pytest.mark.parametrize("t", [-1, 1001, 2.5])
def test_gate_rejects_out_of_range(t):
    with pytest.raises(ContractError):
        gate_multiplier(GateSchedule(), t)


def test_schedule_range():
    with pytest.raises(ContractError):
        GateSchedule(1200)


def _base(encoders, vocab, prompt):
    return [encode_text(e, None, encode(prompt, vocab, e.config.max_len)) for e in encoders]


def _same(a, b):
    return all(
        np.array_equal(x.tokenwise.data, y.tokenwise.data) and np.array_equal(x.pooled.data, y.pooled.data)
        for x, y in zip(a, b)
    )


def test_no_sliders_is_base(toy_encoder, vocab):
    req = ConditioningRequest("person, old")
    assert _same(condition(req, [toy_encoder], vocab), _base([toy_encoder], vocab, "person, old"))


def test_gated_slider_is_base(trained, toy_encoder, vocab):
    req = ConditioningRequest("person, old", [(trained.artifact, 0.4)], timestep=900)
    assert _same(condition(req, [toy_encoder], vocab), _base([toy_encoder], vocab, "person, old"))
    on = ConditioningRequest("person, old", [(trained.artifact, 0.4)], timestep=800)
    assert not _same(condition(on, [toy_encoder], vocab), _base([toy_encoder], vocab, "person, old"))


def test_edit_gate(trained, toy_encoder, vocab):
    req = ConditioningRequest("person", [(trained.artifact, 0.4)], timestep=700)
    assert _same(condition(req, [toy_encoder], vocab, GateSchedule(EDIT_GATE)), _base([toy_encoder], vocab, "person"))
    assert not _same(condition(req, [toy_encoder], vocab), _base([toy_encoder], vocab, "person"))


def test_two_sliders_match_compose(short_pair, toy_encoder, vocab):
    s1, s2 = short_pair
    req = ConditioningRequest("person, smiling", [(s1, 0.3), (s2, -0.2)])
    merged = compose([s1.adapter_sets[0], s2.adapter_sets[0]], [0.3, -0.2])
    expected = encode_text(toy_encoder, merged, encode("person, smiling", vocab, 16))
    assert _same(condition(req, [toy_encoder], vocab), [expected])


def test_all_zero_alphas_are_base(short_pair, toy_encoder, vocab):
    for prompt in ("person", "person, old, male", "a young person with curly hair"):
        req = ConditioningRequest(prompt, [(s, 0.0) for s in short_pair])
        assert _same(condition(req, [toy_encoder], vocab), _base([toy_encoder], vocab, prompt))


def test_fingerprint_mismatch_names_slider(wide_encoder, vocab):
    alien = SliderArtifact([AdapterSet.fresh(wide_encoder.config)], name="wide.tsl")
    from textslider.encoder import EncoderConfig, init_encoder

    enc = init_encoder(EncoderConfig(vocab_size=256, max_len=16, seed=9))
    with pytest.raises(ConfigurationError, match="wide.tsl"):
        condition(ConditioningRequest("person", [(alien, 1.0)]), [enc], vocab)


def test_non_finite_alpha(trained, toy_encoder, vocab):
    with pytest.raises(ContractError):
        condition(ConditioningRequest("person", [(trained.artifact, float("nan"))]), [toy_encoder], vocab)


def test_conditioning_is_deterministic(trained, toy_encoder, vocab):
    req = ConditioningRequest("person, old", [(trained.artifact, 0.3)])
    a = conditioning_bytes(condition(req, [toy_encoder], vocab), req, [toy_encoder])
    b = conditioning_bytes(condition(req, [toy_encoder], vocab), req, [toy_encoder])
    assert a == b


def test_export_layout(trained, toy_encoder, wide_encoder, vocab, tmp_path):
    req = ConditioningRequest("person, old", [(trained.artifact, 0.3)], timestep=500)
    path = tmp_path / "cond.tslw"
    export_conditioning(path, condition(req, [toy_encoder], vocab), req, [toy_encoder])
    arrays, meta = container.read(path)
    assert sorted(arrays) == ["pooled.0", "tokenwise.0"]
    assert arrays["tokenwise.0"].shape == (16, 32)
    assert meta["prompt"] == "person, old" and meta["timestep"] == 500 and meta["t_gate"] == 800
    assert meta["active_sliders"][0]["effective_alpha"] == 0.3


def test_zero_alpha_export_equals_plain_export(trained, toy_encoder, vocab):
    plain = ConditioningRequest("person", [], timestep=900)
    gated = ConditioningRequest("person", [(trained.artifact, 0.5)], timestep=900)
    off = ConditioningRequest("person", [(trained.artifact, 0.0)], timestep=900)

    def export(req):
        return conditioning_bytes(condition(req, [toy_encoder], vocab), req, [toy_encoder])

    assert export(gated) == export(plain) == export(off)

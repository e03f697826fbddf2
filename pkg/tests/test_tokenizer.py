import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textslider.errors import ConfigurationError, ContractError
from textslider.tokenizer import BOS, EOS, PAD, UNK, TokenSeq, Vocab, encode, join_prompt


def test_shipped_vocab_ids(vocab):
    assert vocab.id_of("person") == 10
    assert vocab.id_of("smiling") == 11


def test_empty_text(vocab):
    seq = encode("", vocab, 77)
    assert seq.ids == (BOS, EOS) + (PAD,) * 75
    assert seq.eos_pos == 1


def test_single_word(vocab):
    seq = encode("person", vocab)
    assert seq.ids[:4] == (BOS, 10, EOS, PAD)
    assert seq.eos_pos == 2
    assert len(seq.ids) == 77


def test_comma_is_a_boundary(vocab):
    seq = encode("person, smiling", vocab)
    assert seq.ids[:5] == (BOS, 10, 11, EOS, PAD)
    assert seq.eos_pos == 3


def test_case_and_unknown_words(vocab):
    seq = encode("PERSON zzyzx", vocab, 8)
    assert seq.ids[:4] == (BOS, 10, UNK, EOS)


def test_truncation_keeps_eos(vocab):
    seq = encode("person " * 40, vocab, 16)
    assert seq.eos_pos == 15
    assert seq.ids[-1] == EOS
    assert seq.ids[1:15] == (10,) * 14


def test_bytes_input(vocab):
    assert encode("person".encode("utf-8"), vocab) == encode("person", vocab)


def test_vocab_file_skips_comments(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("# header\nfoo\n\nbar\n", encoding="utf-8")
    v = Vocab.from_file(p)
    assert (v.id_of("foo"), v.id_of("bar"), v.size) == (4, 5, 6)


def test_vocab_duplicates_rejected():
    with pytest.raises(ConfigurationError):
        Vocab(["x", "x"])


def test_vocab_mapping_must_be_dense():
    assert Vocab.from_mapping({"person": 4, "smiling": 5}).size == 6
    with pytest.raises(ConfigurationError):
        Vocab.from_mapping({"person": 10})


def test_token_seq_invariants_enforced():
    with pytest.raises(ContractError):
        TokenSeq((BOS, 5, PAD), 1)
    with pytest.raises(ContractError):
        TokenSeq((BOS, EOS, 7), 1)


def test_max_len_too_small(vocab):
    with pytest.raises(ContractError):
        encode("person", vocab, 1)


@pytest.mark.parametrize(
    "parts, expected",
    [
        (["old"], "old"),
        (["person, smiling", "male"], "person, smiling, male"),
        (["person, elderly, wrinkles", "asian race"], "person, elderly, wrinkles, asian race"),
    ],
)
def test_join_prompt(parts, expected):
    assert join_prompt(parts) == expected


def test_join_prompt_all_empty():
    with pytest.raises(ContractError):
        join_prompt(["", "  "])


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=200), st.integers(2, 40))
def test_encode_invariants_hold_for_any_text(vocab, text, max_len):
    seq = encode(text, vocab, max_len)
    assert len(seq.ids) == max_len
    assert seq.ids[0] == BOS and seq.ids[seq.eos_pos] == EOS
    assert all(i == PAD for i in seq.ids[seq.eos_pos + 1 :])
    assert all(0 <= i < vocab.size for i in seq.ids)
    assert encode(text, vocab, max_len) == seq

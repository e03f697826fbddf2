import numpy as np
import pytest

from textslider.artifact import SliderArtifact
from textslider.errors import ConfigurationError, ContractError, DegenerateDirectionError
from textslider.evaluation import FIVE_LEVELS, SweepReport, concept_direction, pooled, sweep
from textslider.lora import AdapterSet
from textslider.trainer import PromptSpec

from conftest import OLD_YOUNG

# Measured on the 500-epoch toy fixture and frozen as a regression baseline.
BASELINE_PROJECTION = [0.0, 0.117075, 0.238188, 0.363436, 0.492895]


def test_direction_unit_norm(toy_encoder, wide_encoder, vocab):
    for encs in ([toy_encoder], [toy_encoder, wide_encoder]):
        d = concept_direction(encs, vocab, OLD_YOUNG)
        assert abs(np.linalg.norm(d) - 1.0) <= 1e-6
    assert concept_direction([toy_encoder, wide_encoder], vocab, OLD_YOUNG).shape == (80,)


def test_direction_antisymmetric(toy_encoder, vocab):
    flipped = PromptSpec("person", OLD_YOUNG.negative, OLD_YOUNG.positive)
    assert np.array_equal(concept_direction(toy_encoder, vocab, flipped), -concept_direction(toy_encoder, vocab, OLD_YOUNG))


def test_direction_degenerate(toy_encoder, vocab):
    with pytest.raises(DegenerateDirectionError):
        concept_direction(toy_encoder, vocab, PromptSpec("person", "person, old", "person, old"))


@pytest.fixture(scope="module")
def report(trained, toy_encoder, vocab):
    return sweep(trained.artifact, OLD_YOUNG, FIVE_LEVELS, [toy_encoder], vocab)


def test_zero_row_exact(report):
    assert report.alphas[0] == 0.0
    assert report.projection[0] == 0.0 and report.alignment[0] == 0.0
    assert all(report.drift[q][0] == 0.0 for q in report.drift)


def test_report_shape_and_bounds(report):
    assert list(report.drift) == ["male", "female"]
    n = len(report.alphas)
    assert len(report.projection) == len(report.alignment) == n
    assert all(len(v) == n for v in report.drift.values())
    assert all(-1.0 - 1e-6 <= a <= 1.0 + 1e-6 for a in report.alignment)
    assert all(v >= 0 for col in report.drift.values() for v in col)


def test_projection_regression(report):
    assert report.projection[-1] > report.projection[0]
    np.testing.assert_allclose(report.projection, BASELINE_PROJECTION, atol=1e-4)
    assert report.monotone


def test_doubled_alphas_are_recomputed(trained, toy_encoder, vocab, report):
    doubled = sweep(trained.artifact, OLD_YOUNG, [2 * a for a in FIVE_LEVELS], [toy_encoder], vocab)
    assert doubled.alphas == [0.0, 0.2, 0.4, 0.6, 0.8]
    assert doubled.projection[1] == report.projection[2]
    assert doubled.projection[2] == report.projection[4]


def test_csv_format():
    r = SweepReport([0.0, 0.1], [0.0, 0.123456789123], [0.0, 0.5], {"male": [0.0, 1.0 / 3]})
    assert r.to_csv() == "alpha,projection,alignment,drift:male\n0,0,0,0\n0.1,0.123456789,0.5,0.333333333\n"


def test_sweep_rejects_unsorted(trained, toy_encoder, vocab):
    with pytest.raises(ContractError):
        sweep(trained.artifact, OLD_YOUNG, [0.2, 0.1], [toy_encoder], vocab)


def test_sweep_fingerprint_mismatch(wide_encoder, toy_encoder, vocab):
    alien = SliderArtifact([AdapterSet.fresh(wide_encoder.config)])
    with pytest.raises(ConfigurationError):
        sweep(alien, OLD_YOUNG, FIVE_LEVELS, [toy_encoder], vocab)


def test_pooled_concatenates_encoders(toy_encoder, wide_encoder, vocab):
    both = pooled([toy_encoder, wide_encoder], vocab, "person")
    assert np.array_equal(both[:32], pooled(toy_encoder, vocab, "person"))
    assert both.dtype == np.float64

import math

import pytest
import torch

from stsf_cd.errors import InvalidLabelError, ShapeError
from stsf_cd.head import Decoder, class_probabilities, class_weights_from_counts, decode, loss, predict


def _pyramid(channels, size=64):
    return tuple(torch.randn(1, c, size // s, size // s) for c, s in zip(channels, (4, 8, 16, 32)))


def test_decoder_restores_input_resolution():
    logits = decode(_pyramid((16, 32, 64, 128)), Decoder((16, 32, 64, 128), 32, 7))
    assert logits.shape == (1, 7, 64, 64)
    assert torch.isfinite(logits).all()


def test_zero_decoder_emits_classifier_bias():
    decoder = Decoder((4, 4, 8, 8), 8, 3)
    with torch.no_grad():
        for param in decoder.parameters():
            param.zero_()
        decoder.classifier.bias.copy_(torch.tensor([0.5, -1.0, 2.0]))
    logits = decoder(_pyramid((4, 4, 8, 8), 32))
    expected = torch.tensor([0.5, -1.0, 2.0]).view(1, 3, 1, 1).expand_as(logits)
    assert torch.equal(logits, expected)


def test_uniform_logits_loss_is_log_classes():
    value = loss(torch.zeros(1, 7, 4, 4), torch.randint(0, 7, (1, 4, 4)))
    assert value.item() == pytest.approx(math.log(7), abs=1e-6)
    assert value.item() == pytest.approx(1.94591, abs=1e-5)


def test_saturated_correct_prediction_has_no_loss():
    labels = torch.randint(0, 7, (1, 4, 4))
    logits = torch.zeros(1, 7, 4, 4).scatter(1, labels[:, None], 1000.0)
    assert loss(logits, labels).item() < 1e-6


def test_weighted_loss_matches_scalar_loop():
    logits = torch.randn(1, 3, 2, 2)
    labels = torch.tensor([[[0, 2], [1, 2]]])
    weights = torch.tensor([0.5, 2.0, 1.5])
    total = 0.0
    for r in range(2):
        for c in range(2):
            row = [float(v) for v in logits[0, :, r, c]]
            log_z = math.log(sum(math.exp(v) for v in row))
            y = int(labels[0, r, c])
            total += -float(weights[y]) * (row[y] - log_z)
    assert loss(logits, labels, weights).item() == pytest.approx(total / 4, abs=1e-6)


def test_loss_rejects_bad_labels_and_shapes():
    with pytest.raises(InvalidLabelError):
        loss(torch.zeros(1, 3, 2, 2), torch.full((1, 2, 2), 3))
    with pytest.raises(ShapeError):
        loss(torch.zeros(1, 3, 2, 2), torch.zeros(1, 4, 4, dtype=torch.long))


def test_probabilities_sum_to_one():
    probs = class_probabilities(torch.randn(2, 7, 5, 5))
    torch.testing.assert_close(probs.sum(1), torch.ones(2, 5, 5), atol=1e-6, rtol=0)


def test_predict_argmax_and_ties():
    logits = torch.zeros(1, 7, 3, 3)
    logits[:, 3] = 1.0
    assert (predict(logits) == 3).all()

    tie = torch.zeros(1, 7, 1, 1)
    tie[0, 2] = tie[0, 5] = 4.0
    assert predict(tie).item() == 2

    logits = torch.randn(1, 7, 4, 4)
    assert torch.equal(predict(logits + 12.5), predict(logits))


def test_inverse_frequency_weights_are_clipped():
    weights = class_weights_from_counts([1000, 10, 0, 500], "inverse_frequency")
    assert weights.tolist() == pytest.approx([1510 / 4000, 5.0, 5.0, 1510 / 2000])
    assert class_weights_from_counts([9, 1], "unit").tolist() == [1.0, 1.0]
    assert class_weights_from_counts([1000, 1, 1, 1, 1, 1, 1], "inverse_frequency")[0].item() == pytest.approx(0.2)

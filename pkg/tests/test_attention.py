import math

import numpy as np
import pytest
import torch

from attention import CrossAttention, WindowSelfAttention, scaled_dot_attention
from errors import InvalidArgumentError


class TestScaledDotAttention:
    def test_two_token_hand_case(self):
        q = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        k = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        v = torch.tensor([[1.0], [2.0]], dtype=torch.float64)
        out, weights = scaled_dot_attention(q, k, v)
        e = math.exp(1 / math.sqrt(2))
        w1, w2 = e / (e + 1), 1 / (e + 1)
        np.testing.assert_allclose(weights.numpy(), [[w1, w2]], atol=1e-12)
        assert out.item() == pytest.approx(w1 + 2 * w2, abs=1e-12)
        assert out.item() == pytest.approx(1.330, abs=1e-3)

    def test_rows_sum_to_one(self):
        gen = torch.Generator().manual_seed(0)
        _, weights = scaled_dot_attention(torch.randn(2, 5, 4, generator=gen), torch.randn(2, 7, 4, generator=gen),
                                          torch.randn(2, 7, 3, generator=gen))
        np.testing.assert_allclose(weights.sum(-1).numpy(), 1.0, atol=1e-6)

    def test_identical_values_give_that_value(self):
        gen = torch.Generator().manual_seed(1)
        v = torch.full((6, 3), 0.7, dtype=torch.float64)
        out, _ = scaled_dot_attention(torch.randn(4, 5, generator=gen, dtype=torch.float64),
                                      torch.randn(6, 5, generator=gen, dtype=torch.float64), v)
        np.testing.assert_allclose(out.numpy(), 0.7, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            scaled_dot_attention(torch.zeros(2, 3), torch.zeros(4, 2), torch.zeros(4, 1))


class TestCrossAttention:
    def test_head_split(self):
        attn = CrossAttention(6, 5, 8, heads=2)
        out, weights = attn(torch.randn(3, 4, 6), torch.randn(3, 9, 5), return_weights=True)
        assert out.shape == (3, 4, 8)
        assert weights.shape == (3, 2, 4, 9)

    def test_separate_key_context(self):
        torch.manual_seed(0)
        attn = CrossAttention(4, 4, 4)
        queries, context = torch.randn(1, 3, 4), torch.randn(1, 5, 4)
        same = attn(queries, context)
        torch.testing.assert_close(attn(queries, context, key_context=context), same)
        assert not torch.allclose(attn(queries, context, key_context=context + 1.0), same)

    def test_rejects_indivisible_heads(self):
        with pytest.raises(InvalidArgumentError):
            CrossAttention(4, 4, 6, heads=4)


class TestWindowSelfAttention:
    def test_preserves_shape(self):
        block = WindowSelfAttention(8, window_size=4)
        assert block(torch.randn(2, 8, 8, 12)).shape == (2, 8, 8, 12)

    def test_windows_do_not_mix(self):
        torch.manual_seed(2)
        block = WindowSelfAttention(4, window_size=2).eval()
        x = torch.randn(1, 4, 4, 4)
        y = x.clone()
        y[:, :, 2:, 2:] += 1.0
        torch.testing.assert_close(block(x)[:, :, :2, :2], block(y)[:, :, :2, :2])

    def test_rejects_ragged_windows(self):
        with pytest.raises(InvalidArgumentError):
            WindowSelfAttention(4, window_size=4)(torch.randn(1, 4, 6, 8))

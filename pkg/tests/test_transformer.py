import math

import numpy as np
import pytest

from genfs import numerics as nx
from genfs.errors import ConfigError, ContractError
from genfs.gradcheck import directional_check
from genfs.transformer import (
    BOS, EOS, PAD, TransformerConfig, TransformerConsequent, pad_batch, positional_encoding,
)


def tiny(seed=0, **kw):
    base = dict(vocab_size=11, d_model=8, n_heads=2, n_layers=1, d_ff=16, dropout=0.0, max_len=12)
    base.update(kw)
    return TransformerConsequent(TransformerConfig(**base), seed=seed)


class TestConfig:
    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            TransformerConfig(vocab_size=5, d_model=10, n_heads=4)

    def test_dropout_range(self):
        with pytest.raises(ConfigError):
            TransformerConfig(vocab_size=5, dropout=1.0)

    def test_unknown_init(self):
        with pytest.raises(ConfigError):
            TransformerConfig(vocab_size=5, init="orthogonal")


class TestPositionalEncoding:
    def test_position_zero(self):
        np.testing.assert_array_equal(positional_encoding(1, 6)[0], [0, 1, 0, 1, 0, 1])

    def test_formula(self):
        np.testing.assert_allclose(positional_encoding(2, 2)[1], [math.sin(1), math.cos(1)], rtol=1e-6)

    def test_general_entry(self):
        pe = positional_encoding(10, 16)
        p, i = 7, 3
        assert pe[p, 2 * i] == pytest.approx(math.sin(p / 10000 ** (2 * i / 16)), abs=1e-6)
        assert pe[p, 2 * i + 1] == pytest.approx(math.cos(p / 10000 ** (2 * i / 16)), abs=1e-6)

    def test_range(self):
        pe = positional_encoding(50, 32)
        assert pe.min() >= -1 and pe.max() <= 1

    def test_too_long(self):
        with pytest.raises(ContractError):
            positional_encoding(13, 8, max_len=12)


class TestEmbedWithBos:
    def test_empty_is_bos_only(self):
        assert tiny().embed_with_bos([]).shape == (1, 8)

    def test_length(self):
        assert tiny().embed_with_bos([4, 5, 6]).shape == (4, 8)

    def test_deterministic(self):
        m = tiny()
        assert np.array_equal(m.embed_with_bos([4, 5]).data, m.embed_with_bos([4, 5]).data)

    def test_bos_row_uses_bos_embedding(self):
        m = tiny()
        row = m.embed_with_bos([7]).data[0]
        expected = m.embed.data[BOS] * math.sqrt(8) + positional_encoding(1, 8)[0]
        np.testing.assert_allclose(row, expected, rtol=1e-6)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            tiny().embed_with_bos([11])


class TestForward:
    def test_shape(self):
        assert tiny()([4, 5, 6], [7, 8]).shape == (3, 11)

    def test_causal_mask_exact(self):
        m = tiny()
        src, tgt = [4, 5, 6], [7, 8, 9, 10]
        base = m(src, tgt).data
        for i in range(len(tgt) + 1):
            for j in range(i, len(tgt)):
                changed = list(tgt)
                changed[j] = 4 if tgt[j] != 4 else 5
                # row i sees bos + tgt[:i]; tgt[j] for j >= i sits at decoder position j + 1 > i
                assert np.array_equal(m(src, changed).data[i], base[i])

    def test_deterministic_without_dropout(self):
        m = tiny()
        assert m([4, 5], [6]).data.tobytes() == m([4, 5], [6]).data.tobytes()

    def test_dropout_only_in_training(self):
        m = tiny(dropout=0.5)
        m.eval()
        a = m([4, 5], [6]).data
        assert np.array_equal(a, m([4, 5], [6]).data)
        m.train()
        assert not np.array_equal(a, m([4, 5], [6]).data)

    def test_too_long(self):
        with pytest.raises(ContractError):
            tiny()(list(range(4, 11)) * 2, [4])

    def test_attention_rows_are_distributions(self):
        m = tiny()
        m([4, 5, 6], [7, 8])
        for layer in m.decoder:
            for att in (layer.self_attn, layer.cross_attn):
                np.testing.assert_allclose(att.last_weights.sum(axis=-1), 1.0, atol=1e-6)
                assert att.last_weights.min() >= 0

    def test_padding_does_not_leak(self):
        m = tiny()
        single = m.logits(pad_batch([[4, 5]]), pad_batch([[6]])).data[0]
        batched = m.logits(pad_batch([[4, 5], [4, 5, 6, 7, 8]]), pad_batch([[6], [6, 7, 8]])).data[0, :2]
        np.testing.assert_allclose(batched, single, atol=1e-5)

    def test_zero_init_is_uniform(self):
        m = tiny(init="zeros")
        np.testing.assert_array_equal(m([4, 5], [6]).data, 0.0)


class TestParameters:
    def test_count_fixed_by_config(self):
        def count(m):
            return sum(p.data.size for p in m.parameters())
        assert count(tiny(seed=0)) == count(tiny(seed=1))
        d, f, V, L = 8, 16, 11, 1
        attn = 4 * (d * d + d)
        ln = 2 * d
        ff = d * f + f + f * d + d
        enc = attn + ff + 2 * ln
        dec = 2 * attn + ff + 3 * ln
        assert count(tiny()) == V * d + L * (enc + dec) + 2 * ln + d * V + V

    def test_names_unique(self):
        names = [n for n, _ in tiny().named_parameters()]
        assert len(names) == len(set(names))


class TestGradient:
    def test_full_consequent_directional(self):
        m = tiny(n_heads=1)
        src = pad_batch([[4, 5, 6], [7, 8]])
        tgt_in = pad_batch([[9, 10], [4]])
        tgt_out = pad_batch([[9, 10], [4]], prepend_bos=False, append_eos=True)

        def loss():
            return nx.cross_entropy(m.logits(src, tgt_in), tgt_out, ignore_index=PAD)

        for seed in range(3):
            assert directional_check(loss, m.parameters(), seed=seed) <= 1e-3


class TestPadBatch:
    def test_layout(self):
        out = pad_batch([[4], [5, 6]], append_eos=True)
        np.testing.assert_array_equal(out, [[BOS, 4, EOS, PAD], [BOS, 5, 6, EOS]])

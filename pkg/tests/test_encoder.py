import numpy as np
import pytest
import torch

from markedflow.encoder import HistoryEncoder, sinusoid_features
from markedflow.math_core import finite_diff_grad


def make_encoder(M=3, dim=8, layers=1, heads=1, seed=0):
    torch.manual_seed(seed)
    enc = HistoryEncoder(M, dim, layers, heads).double()
    with torch.no_grad():
        enc.h0.normal_()
    return enc


def events(n, M=3, seed=0):
    g = np.random.default_rng(seed)
    return [(float(g.normal()), int(g.integers(M))) for _ in range(n)]


class TestEmbedEvent:
    def test_mark_block_is_embedding_row(self):
        enc = make_encoder()
        e = enc.embed_event(torch.tensor([0.4], dtype=torch.float64), torch.tensor([2]))
        assert torch.equal(e[0, enc.time_dim :], enc.mark_embedding.weight[2])

    def test_time_features_at_origin(self):
        enc = make_encoder()
        e = enc.embed_event(torch.tensor([0.0], dtype=torch.float64), torch.tensor([0]))
        expected = torch.tensor([0.0, 1.0] * (enc.time_dim // 2), dtype=torch.float64)
        assert torch.equal(e[0, : enc.time_dim], expected)

    def test_time_block_independent_of_mark(self):
        enc = make_encoder()
        tau = torch.tensor([0.7, 0.7], dtype=torch.float64)
        e = enc.embed_event(tau, torch.tensor([0, 1]))
        assert torch.equal(e[0, : enc.time_dim], e[1, : enc.time_dim])

    def test_mark_out_of_range(self):
        enc = make_encoder(M=3)
        with pytest.raises(IndexError):
            enc.embed_event(torch.tensor([0.1], dtype=torch.float64), torch.tensor([3]))

    def test_frequencies_geometric(self):
        # with 8 features the four bands use w_k = 1e4 ** (-k / 4)
        x = torch.tensor([1.0], dtype=torch.float64)
        f = sinusoid_features(x, 8)[0]
        w = 1e4 ** (-np.arange(4) / 4)
        np.testing.assert_allclose(f[0::2].numpy(), np.sin(w), rtol=1e-14)
        np.testing.assert_allclose(f[1::2].numpy(), np.cos(w), rtol=1e-14)


class TestEncodeHistory:
    def test_empty_history(self):
        enc = make_encoder()
        out = enc.encode_history([])
        assert len(out) == 1
        assert torch.equal(out[0], enc.h0)

    @pytest.mark.parametrize("layers,heads", [(1, 1), (2, 2), (3, 4)])
    def test_shapes(self, layers, heads):
        enc = make_encoder(dim=8, layers=layers, heads=heads)
        out = enc.encode_history(events(6))
        assert len(out) == 7
        assert all(h.shape == (8,) for h in out)
        assert all(torch.isfinite(h).all() for h in out)

    def test_append_keeps_prefix_bitwise(self):
        enc = make_encoder(layers=2)
        ev = events(12)
        with torch.no_grad():
            full = enc.encode_history(ev)
            shorter = enc.encode_history(ev[:-1])
        for a, b in zip(shorter, full):
            assert torch.equal(a, b)

    def test_future_permutation(self):
        enc = make_encoder(layers=2)
        ev = events(10, seed=3)
        swapped = list(ev)
        swapped[6], swapped[8] = swapped[8], swapped[6]
        with torch.no_grad():
            a = enc.encode_history(ev)
            b = enc.encode_history(swapped)
        # h_i covers events 1..i, so h_0..h_6 see none of the swapped events
        for i in range(7):
            assert torch.equal(a[i], b[i])
        assert not torch.equal(a[7], b[7])

    def test_suffix_perturbation_any_position(self):
        enc = make_encoder(dim=16, heads=2)
        ev = events(9, seed=5)
        with torch.no_grad():
            base = enc.encode_history(ev)
            for j in range(len(ev)):
                changed = list(ev)
                changed[j] = (changed[j][0] + 0.5, (changed[j][1] + 1) % 3)
                out = enc.encode_history(changed)
                for i in range(j + 1):
                    assert torch.equal(out[i], base[i])

    def test_batched_matches_unbatched_with_padding(self):
        enc = make_encoder()
        a, b = events(5, seed=1), events(3, seed=2)
        tau = torch.tensor([[e[0] for e in a], [e[0] for e in b] + [0.0, 0.0]], dtype=torch.float64)
        marks = torch.tensor([[e[1] for e in a], [e[1] for e in b] + [0, 0]])
        with torch.no_grad():
            H = enc(tau, marks)
            ref = enc.encode_history(b)
        for i in range(4):
            torch.testing.assert_close(H[1, i], ref[i], rtol=1e-13, atol=1e-13)


def test_gradients_match_finite_differences():
    enc = make_encoder(M=2, dim=8)
    ev = events(5, M=2, seed=9)
    target = torch.tensor(np.random.default_rng(0).normal(size=(6, 8)))
    params = list(enc.parameters())

    def loss_of(flat):
        with torch.no_grad():
            torch.nn.utils.vector_to_parameters(torch.as_tensor(flat), params)
            H = torch.stack(enc.encode_history(ev))
            return float(((H - target) ** 2).sum())

    flat0 = torch.nn.utils.parameters_to_vector(params).detach().clone()
    H = torch.stack(enc.encode_history(ev))
    ((H - target) ** 2).sum().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).numpy()
    numeric = finite_diff_grad(loss_of, flat0.numpy().copy(), h=1e-5)
    torch.nn.utils.vector_to_parameters(flat0, params)
    # central-difference round-off is about eps * |f| / h ~ 1e-9 here, so
    # coordinates below 1e-5 (e.g. the softmax-invariant key bias) get an absolute floor
    scale = np.maximum(np.abs(analytic), 1e-5)
    assert np.max(np.abs(numeric - analytic) / scale) < 1e-4

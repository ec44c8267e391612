"""Small shared builders for the test suite."""

import numpy as np
import torch

from markedflow.event_data import Dataset, EventSequence, encode_sequences, fit_norm, intervalize
from markedflow.hawkes import HawkesSpec, simulate_many
from markedflow.math_core import Rng, finite_diff_grad
from markedflow.model import build_model
from markedflow.training import batch_loss, batch_tensors, draw_noise

COUPLED_SPEC = HawkesSpec(
    base_rates=[0.2, 0.2], excitation=[[0.8, 0.0], [0.0, 0.8]], decay=1.0, horizon=20.0, coupling_scales=[0.2, 5.0]
)


def hawkes_dataset(n, seed, spec=COUPLED_SPEC):
    return Dataset(tuple(simulate_many(spec, n, Rng(seed))), spec.num_marks)


def toy_sequences(n, M=2, length=6, seed=0):
    g = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        times = np.cumsum(g.exponential(1.0, size=length)) + 1e-3
        out.append(EventSequence.from_pairs(zip(times, g.integers(0, M, size=length))))
    return out


def fitted_model(seqs, seed=0, **hparams):
    model = build_model(seed, **hparams)
    model.norm = fit_norm([intervalize(s) for s in seqs])
    return model


def full_gradient_check(seed=0, K=10, h=1e-5, sigma1=0.1):
    """Autograd vs central differences of the whole loss (encoder, output net and c).

    Returns the worst per-coordinate relative error, with an absolute floor of
    1e-5 on the denominator for coordinates whose gradient is numerically zero.
    With sigma1 = 0.001 the last step accuracies reach ~1e5 and round-off in
    the differences dominates, so the miniature model uses sigma1 = 0.1.
    """
    seq = toy_sequences(1, M=2, length=4, seed=seed)
    # wide clip range so every estimate is interior and the loss is smooth
    model = fitted_model(seq, seed=seed, num_marks=2, dim=4, heads=1, psi_blocks=1, x_min=-50.0, x_max=50.0, sigma1=sigma1)
    with torch.no_grad():
        model.c_raw.copy_(torch.tensor([0.4, -0.7], dtype=torch.float64))
    batch = encode_sequences(seq, model.norm)
    _, tau, marks = batch_tensors(batch, model)
    noise = draw_noise(tau.detach().numpy(), marks.numpy(), model, K, 2, Rng(seed))
    params = list(model.parameters())

    def f(flat):
        with torch.no_grad():
            torch.nn.utils.vector_to_parameters(torch.as_tensor(flat), params)
            return float(batch_loss(model, batch, K, 2, Rng(0), noise=noise)[0])

    flat0 = torch.nn.utils.parameters_to_vector(params).detach().clone()
    model.zero_grad()
    batch_loss(model, batch, K, 2, Rng(0), noise=noise)[0].backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).numpy()
    numeric = finite_diff_grad(f, flat0.numpy().copy(), h=h)
    torch.nn.utils.vector_to_parameters(flat0, params)
    scale = np.maximum(np.abs(analytic), 1e-5)
    return float(np.max(np.abs(numeric - analytic) / scale)), analytic

from types import SimpleNamespace

import pytest
import torch
from torch.testing import assert_close

from models import forward, init_gaussian, output_loss
from utils import linalg
from utils.bptt import BpttConfig, backward, delta_norm_profile, jacobian, top_delta
from utils.datasets import TaskSpec, generate


def mean_loss(params, batch):
    trace = forward(params, batch.inputs)
    return float(output_loss(trace, batch.targets, params.loss_kind).loss.mean())


def run_backward(params, batch, h):
    trace = forward(params, batch.inputs)
    loss = output_loss(trace, batch.targets, params.loss_kind, batch.spec.success_tolerance)
    return trace, backward(params, trace, loss.output_delta, BpttConfig(h=h))


def finite_difference(params, batch, name, eps=1e-6):
    block = params.blocks()[name]
    grad = torch.zeros_like(block)
    flat, out = block.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        saved = float(flat[i])
        flat[i] = saved + eps
        plus = mean_loss(params, batch)
        flat[i] = saved - eps
        minus = mean_loss(params, batch)
        flat[i] = saved
        out[i] = (plus - minus) / (2 * eps)
    return grad


@pytest.mark.parametrize("name", ["w_in", "w_rec", "w_out", "b"])
def test_full_depth_gradient_matches_finite_differences(small_net, adding_batch, name):
    _, result = run_backward(small_net, adding_batch, h=adding_batch.T)
    expected = finite_difference(small_net.clone(), adding_batch, name)
    assert_close(result.grads[name], expected, rtol=1e-5, atol=1e-9)


def test_cross_entropy_gradient_matches_finite_differences():
    batch = generate(TaskSpec("temporal_order", 10), 4, seed=9)
    params = init_gaussian(6, 5, 4, 0.5, seed=8, output_activation="softmax")
    _, result = run_backward(params, batch, h=batch.T)
    expected = finite_difference(params.clone(), batch, "w_rec")
    assert_close(result.grads["w_rec"], expected, rtol=1e-5, atol=1e-9)


def test_gradient_matches_autograd(small_net, adding_batch):
    blocks = {k: v.clone().requires_grad_(True) for k, v in small_net.blocks().items()}
    z = linalg.zeros(len(adding_batch), small_net.n_hid)
    for k in range(adding_batch.T):
        z = torch.tanh(adding_batch.inputs[:, k] @ blocks["w_in"] + z @ blocks["w_rec"] + blocks["b"])
    y = z @ blocks["w_out"]
    (0.5 * (y - adding_batch.targets).pow(2).sum(dim=-1)).mean().backward()

    _, result = run_backward(small_net, adding_batch, h=adding_batch.T)
    for name, block in blocks.items():
        assert_close(result.grads[name], block.grad)


def test_deltas_follow_the_jacobian_recursion(small_net, adding_batch):
    trace, result = run_backward(small_net, adding_batch, h=3)
    T = trace.steps
    assert result.h == 3 and len(result.deltas) == 4
    for n in range(1, 4):
        jac = jacobian(small_net, trace.derivative(T - n))
        assert_close(result.deltas[n], linalg.row_vec_mat(result.deltas[n - 1], jac))


def test_top_delta(small_net, adding_batch):
    trace, result = run_backward(small_net, adding_batch, h=1)
    loss = output_loss(trace, adding_batch.targets, "mse")
    assert_close(result.top, top_delta(small_net, trace, loss.output_delta))


def test_deepest_delta_at_full_depth_is_initial_state_gradient(small_net, adding_batch):
    _, result = run_backward(small_net, adding_batch, h=adding_batch.T)
    assert_close(result.deep, linalg.row_vec_mat(result.deltas[-2], small_net.w_rec.T))
    assert torch.count_nonzero(result.gw_in_norms[-1]) == 0
    assert torch.count_nonzero(result.gw_rec_norms[-1]) == 0


def test_per_step_gradient_norms(small_net, adding_batch):
    trace, result = run_backward(small_net, adding_batch, h=2)
    T = trace.steps
    for n in range(3):
        delta = result.deltas[n]
        for i in range(len(adding_batch)):
            contribution = torch.outer(trace.input(T - n)[i], delta[i])
            assert float(result.gw_in_norms[n, i]) == pytest.approx(float(torch.linalg.norm(contribution)), rel=1e-12)


def test_truncation_depth_is_validated(small_net, adding_batch):
    with pytest.raises(ValueError):
        run_backward(small_net, adding_batch, h=0)
    with pytest.raises(ValueError):
        run_backward(small_net, adding_batch, h=adding_batch.T + 1)


def test_delta_norm_profile(small_net, adding_batch):
    _, result = run_backward(small_net, adding_batch, h=4)
    profile = delta_norm_profile(result)
    assert [n for n, _ in profile] == list(range(5))
    assert profile[0][1] == pytest.approx(float(linalg.norm2(result.top).mean()))


def test_backward_is_linear_in_the_output_delta(small_net, adding_batch):
    trace = forward(small_net, adding_batch.inputs)
    output_delta = output_loss(trace, adding_batch.targets, "mse").output_delta
    base = backward(small_net, trace, output_delta, BpttConfig(h=adding_batch.T))
    for c in (-2.0, 0.0, 0.5, 3.0):
        scaled = backward(small_net, trace, c * output_delta, BpttConfig(h=adding_batch.T))
        for n, delta in enumerate(base.deltas):
            assert_close(scaled.deltas[n], c * delta, rtol=1e-12, atol=1e-300)
        for name, grad in base.grads.items():
            assert_close(scaled.grads[name], c * grad, rtol=1e-12, atol=1e-300)


def tiny_problem(seed):
    """Random net with n_hid <= 5 and a random batch with T <= 8"""
    generator = torch.Generator().manual_seed(1000 + seed)
    activation = ("linear", "softmax")[seed % 2]
    n_in, n_hid, n_out = 1 + seed % 3, 1 + seed % 5, 1 + (seed // 2) % 3
    if activation == "softmax":
        n_out += 1
    steps = 1 + (seed * 3) % 8
    params = init_gaussian(n_in, n_hid, n_out, 0.6, seed=seed, output_activation=activation)
    inputs = torch.randn(3, steps, n_in, generator=generator, dtype=linalg.DTYPE)
    if activation == "softmax":
        targets = torch.randint(0, n_out, (3,), generator=generator)
    else:
        targets = torch.randn(3, n_out, generator=generator, dtype=linalg.DTYPE)
    return params, SimpleNamespace(inputs=inputs, targets=targets, T=steps)


@pytest.mark.parametrize("seed", range(25))
def test_random_tiny_networks_match_finite_differences(seed):
    params, batch = tiny_problem(seed)
    trace = forward(params, batch.inputs)
    output_delta = output_loss(trace, batch.targets, params.loss_kind).output_delta
    result = backward(params, trace, output_delta, BpttConfig(h=batch.T))
    for name in ("w_in", "w_rec", "w_out", "b"):
        expected = finite_difference(params.clone(), batch, name)
        assert_close(result.grads[name], expected, rtol=1e-6, atol=1e-9)

import numpy as np
import pytest
import torch

from ttsnn.snn import (LIFCell, backprop_unrolled, batchnorm_t, direct_encode,
                       lif_step, spike_fn, surrogate_grad)


class TestLIFStep:
    def test_two_step_hand_computation(self):
        # tau=0.25, v_th=0.5: u1 = 0.25*0 + 0.4 = 0.4 < 0.5 -> no spike;
        # u2 = 0.25*0.4 + 0.45 = 0.55 >= 0.5 -> spike, hard reset to 0.
        u = torch.zeros(1)
        u, s = lif_step(u, torch.tensor([0.4]), tau_m=0.25, v_th=0.5)
        assert s.item() == 0.0 and u.item() == pytest.approx(0.4)
        u, s = lif_step(u, torch.tensor([0.45]), tau_m=0.25, v_th=0.5)
        assert s.item() == 1.0 and u.item() == 0.0

    def test_hard_reset_only_where_spiking(self):
        u0 = torch.zeros(3)
        i = torch.tensor([0.2, 0.6, 1.5])
        u, s = lif_step(u0, i, tau_m=0.25, v_th=0.5)
        assert torch.equal(s, torch.tensor([0.0, 1.0, 1.0]))
        assert torch.allclose(u, torch.tensor([0.2, 0.0, 0.0]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            lif_step(torch.zeros(2), torch.zeros(3), 0.25, 0.5)

    def test_cell_defaults(self):
        cell = LIFCell()
        assert cell.tau_m == 0.25 and cell.v_th == 0.5

    def test_cell_validation(self):
        with pytest.raises(ValueError):
            LIFCell(tau_m=0.0)
        with pytest.raises(ValueError):
            LIFCell(v_th=-1.0)


class TestSurrogate:
    def test_triangle_shape(self):
        u = torch.tensor([-1.0, 0.0, 0.5, 1.0, 1.5, 2.5])
        g = surrogate_grad(u, v_th=0.5, alpha=1.0)
        # max(0, 1 - |u - v_th|/alpha)/alpha
        expected = torch.tensor([0.0, 0.5, 1.0, 0.5, 0.0, 0.0])
        assert torch.allclose(g, expected)

    def test_alpha_scales_width_and_height(self):
        u = torch.tensor([0.5])
        assert surrogate_grad(u, 0.5, alpha=2.0).item() == pytest.approx(0.5)

    def test_spike_fn_backward_uses_triangle(self):
        u = torch.tensor([0.3, 0.9], requires_grad=True)
        spike_fn(u, v_th=0.5).sum().backward()
        assert torch.allclose(u.grad, surrogate_grad(u.detach(), 0.5))

    def test_forward_is_binary(self):
        u = torch.linspace(-1, 2, 13)
        s = spike_fn(u, v_th=0.5)
        assert set(s.tolist()) <= {0.0, 1.0}
        assert torch.equal(s, (u >= 0.5).float())


class TestSmoothedGate:
    def test_approaches_hard_gate_away_from_threshold(self):
        u0 = torch.zeros(2)
        i = torch.tensor([0.1, 0.9])
        _, hard = lif_step(u0, i, 0.25, 0.5)
        _, soft = lif_step(u0, i, 0.25, 0.5, smooth_temp=0.01)
        assert torch.allclose(hard, soft, atol=1e-8)

    def test_differentiable_everywhere(self):
        u = torch.full((4,), 0.5, requires_grad=True)
        _, s = lif_step(torch.zeros(4), u, 0.25, 0.5, smooth_temp=0.1)
        s.sum().backward()
        assert torch.isfinite(u.grad).all() and (u.grad > 0).all()


class TestDirectEncode:
    def test_replicates_image_every_timestep(self):
        img = torch.rand(2, 3, 4, 4)
        enc = direct_encode(img, 5)
        assert enc.shape == (5, 2, 3, 4, 4)
        for t in range(5):
            assert torch.equal(enc[t], img)

    def test_rejects_nonpositive_steps(self):
        with pytest.raises(ValueError):
            direct_encode(torch.rand(1, 1, 2, 2), 0)


def test_batchnorm_t_channel_check():
    bn = torch.nn.BatchNorm2d(4)
    with pytest.raises(ValueError, match="channel"):
        batchnorm_t(torch.rand(2, 3, 5, 5), bn)


def test_backprop_unrolled_matches_autograd():
    from ttsnn.models import tiny6
    from ttsnn.train import SpikingNet, init_ttsnn

    spec = tiny6(input_hw=8, t_steps=2, mode="baseline")
    model, _ = init_ttsnn(spec, rank_source="fixed-list", rank_list=None, seed=0)
    images = torch.rand(4, 1, 8, 8)
    labels = torch.randint(0, 10, (4,))
    grads = backprop_unrolled(model, images, labels)

    loss = torch.nn.functional.cross_entropy(model(images).sum(0), labels)
    model.zero_grad()
    loss.backward()
    for name, p in model.named_parameters():
        assert name in grads
        assert torch.allclose(grads[name], p.grad, atol=1e-6), name

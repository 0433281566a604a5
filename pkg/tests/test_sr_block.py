import pytest
import torch

from helpers import check_param_grads_fd
from specreg.sr_block import FourierModulator, OrthoConv, SRBlock, orthogonality_penalty


def embed_identity(scale=1.0):
    w = torch.zeros(12, 3)
    w[:3, :3] = scale * torch.eye(3)
    return w


class TestOrthoConv:
    def test_identity_embedding(self):
        conv = OrthoConv()
        with torch.no_grad():
            conv.weight.copy_(embed_identity())
        x = torch.rand(2, 3, 8, 8)
        out = conv(x)
        assert torch.equal(out[:, :3], x)
        assert (out[:, 3:] == 0).all()

    def test_singular_values_preserved(self):
        # oracle: SVD of the channel-flattened matrices on both sides
        for seed in range(20):
            g = torch.Generator().manual_seed(seed)
            conv = OrthoConv()
            torch.manual_seed(seed)
            torch.nn.init.orthogonal_(conv.weight)
            x = torch.rand(1, 3, 16, 16, generator=g, dtype=torch.float32).double()
            conv = conv.double()
            out = conv(x)
            sv_in = torch.linalg.svdvals(x[0].reshape(3, -1))
            sv_out = torch.linalg.svdvals(out[0].reshape(12, -1))
            assert (sv_out[:3] - sv_in).abs().max() <= 1e-4
            assert sv_out[3:].abs().max() <= 1e-4

    def test_zero_input(self):
        assert (OrthoConv()(torch.zeros(1, 3, 4, 4)) == 0).all()

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channels"):
            OrthoConv()(torch.rand(1, 4, 8, 8))

    def test_starts_orthonormal(self):
        conv = OrthoConv()
        assert orthogonality_penalty(conv.weight) <= 1e-10


class TestOrthogonalityPenalty:
    def test_exact_zero_on_identity_embedding(self):
        assert orthogonality_penalty(embed_identity()).item() == 0.0

    def test_scaled_embedding_closed_form(self):
        # W = 2 [I; 0]: ||4I - I||_F^2 = 27, exactly
        assert orthogonality_penalty(embed_identity(2.0)).item() == 27.0

    def test_gradient_matches_finite_differences(self):
        g = torch.Generator().manual_seed(5)
        w = (torch.randn(12, 3, generator=g) * 0.4).double().requires_grad_(True)
        orthogonality_penalty(w).backward()
        from helpers import finite_diff_grad, rel_err

        fd = finite_diff_grad(lambda v: orthogonality_penalty(v), w, h=1e-6)
        assert rel_err(w.grad, fd) <= 1e-3

    def test_penalty_descent(self):
        g = torch.Generator().manual_seed(0)
        w = torch.nn.Parameter(torch.randn(12, 3, generator=g) * 0.3)
        opt = torch.optim.SGD([w], lr=0.01)
        start = orthogonality_penalty(w).sqrt().item()
        for _ in range(200):
            opt.zero_grad()
            orthogonality_penalty(w).backward()
            opt.step()
        end = orthogonality_penalty(w).sqrt().item()
        assert end <= start / 10


class TestFourierModulator:
    def test_identity_at_init(self):
        mod = FourierModulator(size=16)
        x = torch.rand(2, 3, 16, 16)
        assert (mod(x) - x).abs().max() <= 1e-5

    def test_uniform_scale_two(self):
        mod = FourierModulator(size=8)
        with torch.no_grad():
            mod.scale_re.fill_(2.0)
        x = torch.rand(1, 3, 8, 8)
        assert (mod(x) - 2 * x).abs().max() <= 1e-5

    def test_dc_only_gives_channel_mean(self):
        mod = FourierModulator(size=8)
        with torch.no_grad():
            mod.scale_re.zero_()
            mod.scale_re[:, 0, 0] = 1.0
        x = torch.rand(1, 3, 8, 8)
        out = mod(x)
        means = x.mean(dim=(2, 3), keepdim=True)
        assert (out - means).abs().max() <= 1e-6

    def test_output_is_real_valued_map(self):
        mod = FourierModulator(size=8)
        with torch.no_grad():
            mod.scale_im.normal_(0, 0.5)
            mod.scale_re.normal_(1, 0.5)
        out = mod(torch.rand(1, 3, 8, 8))
        assert out.dtype == torch.float32

    def test_size_mismatch(self):
        mod = FourierModulator(size=16)
        with pytest.raises(ValueError, match="size"):
            mod(torch.rand(1, 3, 8, 8))
        with pytest.raises(ValueError, match="square"):
            mod(torch.rand(1, 3, 16, 8))


class TestSRBlock:
    @pytest.mark.parametrize("size", [32, 24, 16, 8])
    def test_shape_preserved(self, size):
        block = SRBlock(size=size).eval()
        x = torch.rand(2, 3, size, size)
        assert block(x).shape == x.shape

    def test_eval_mode_deterministic(self):
        block = SRBlock(size=8).eval()
        x = torch.rand(1, 3, 8, 8)
        batch = torch.cat([x, x])
        out = block(batch)
        assert torch.equal(out[0], out[1])

    def test_all_parameters_get_gradients(self):
        block = SRBlock(size=8)
        block(torch.rand(2, 3, 8, 8)).sum().backward()
        for name, p in block.named_parameters():
            assert p.grad is not None and p.grad.abs().sum() > 0, name

    def test_forward_gradients_match_finite_differences(self):
        torch.manual_seed(0)
        block = SRBlock(size=4).double().eval()
        with torch.no_grad():  # move off the identity init so gradients are generic
            for p in block.parameters():
                p.add_(0.05 * torch.randn_like(p))
        x = torch.rand(1, 3, 4, 4, dtype=torch.float64)
        check_param_grads_fd(block, lambda: block(x).sum(), h=1e-6, tol=1e-3)

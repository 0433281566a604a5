import numpy as np
import pytest
import torch

from helpers import finite_diff_grad
from specreg.losses import LossWeights, loss_info, loss_svd, total_loss
from specreg.model import build_model


def nondegenerate_image(b=2, c=3, n=6, seed=0):
    """Random batch whose channel spectra have comfortable gaps."""
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(b, c, n, n, dtype=torch.float64, generator=g)
    return x + 0.5 * torch.eye(n, dtype=torch.float64)


class TestLossSVD:
    def test_identical_inputs_zero(self):
        x = nondegenerate_image()
        assert loss_svd(x, x).item() == pytest.approx(0.0, abs=1e-9)

    def test_doubled_input_closed_form(self):
        # sigma term ||sigma||, UV' term 0, pixel term ||x||_F, via numpy SVD oracle
        x = nondegenerate_image(b=1, seed=4)
        value = loss_svd(2 * x, x).item()
        expected = 0.0
        for ch in x[0].numpy():
            sigma = np.linalg.svd(ch, compute_uv=False)
            expected += np.linalg.norm(sigma) + np.linalg.norm(ch)
        assert value == pytest.approx(expected, rel=1e-6)

    def test_batch_mean_reduction(self):
        x = nondegenerate_image(b=1, seed=5)
        single = loss_svd(2 * x, x).item()
        rep = torch.cat([x, x])
        assert loss_svd(2 * rep, rep).item() == pytest.approx(single, rel=1e-9)

    def test_gradient_matches_finite_differences(self):
        x_avg = nondegenerate_image(b=1, c=2, seed=6).requires_grad_(True)
        target = nondegenerate_image(b=1, c=2, seed=7)
        loss_svd(x_avg, target).backward()
        fd = finite_diff_grad(lambda v: loss_svd(v, target), x_avg, h=1e-6)
        assert float((x_avg.grad - fd).norm()) <= 1e-3 * float(fd.norm())

    def test_sign_flip_gauge_invariance(self):
        # oracle recomputation with flipped singular-vector pairs gives the same value
        a = nondegenerate_image(b=1, c=1, seed=8)
        c = nondegenerate_image(b=1, c=1, seed=9)
        value = loss_svd(a, c).item()

        def terms(mat_a, mat_c, flips_a, flips_c):
            ua, sa, vta = np.linalg.svd(mat_a)
            uc, sc, vtc = np.linalg.svd(mat_c)
            ua, vta = ua * flips_a, vta * flips_a[:, None]
            uc, vtc = uc * flips_c, vtc * flips_c[:, None]
            return (
                np.linalg.norm(sa - sc)
                + np.linalg.norm(ua @ vta - uc @ vtc)
                + np.linalg.norm(mat_a - mat_c)
            )

        rng = np.random.default_rng(0)
        for _ in range(5):
            fa = rng.choice([-1.0, 1.0], size=6)
            fc = rng.choice([-1.0, 1.0], size=6)
            manual = terms(a[0, 0].numpy(), c[0, 0].numpy(), fa, fc)
            assert manual == pytest.approx(value, rel=1e-9)

    def test_nonnegative(self):
        for seed in range(4):
            a = nondegenerate_image(seed=seed)
            b = nondegenerate_image(seed=seed + 50)
            assert loss_svd(a, b).item() >= 0

    def test_degenerate_spectrum_stays_finite(self):
        # repeated singular values would blow up SVD gradients without the jitter
        x = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
        x[0, 0] = torch.eye(4)
        x.requires_grad_(True)
        target = nondegenerate_image(b=1, c=1, n=4, seed=3)
        loss_svd(x, target).backward()
        assert torch.isfinite(x.grad).all()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            loss_svd(torch.rand(1, 3, 4, 4), torch.rand(1, 3, 5, 5))

    def test_nonfinite_rejected(self):
        x = torch.rand(1, 3, 4, 4)
        bad = x.clone()
        bad[0, 0, 0, 0] = float("inf")
        with pytest.raises(ValueError, match="finite"):
            loss_svd(bad, x)


class TestLossInfo:
    def test_identical_zero(self):
        f = [torch.rand(2, 8, 4, 4), torch.rand(2, 16, 2, 2)]
        assert loss_info(f, [t.clone() for t in f]).item() == 0.0

    def test_constant_offset_closed_form(self):
        base = torch.zeros(1, 2, 3, 3)
        c = 0.7
        n_elements = base[0].numel()
        value = loss_info([base + c], [base]).item()
        assert value == pytest.approx((n_elements * c**2) ** 0.5, rel=1e-6)

    def test_gradient_matches_finite_differences(self):
        g = torch.Generator().manual_seed(11)
        fa = torch.rand(2, 3, 4, 4, dtype=torch.float64, generator=g).requires_grad_(True)
        fc = torch.rand(2, 3, 4, 4, dtype=torch.float64, generator=g)
        loss_info([fa], [fc]).backward()
        fd = finite_diff_grad(lambda v: loss_info([v], [fc]), fa, h=1e-6)
        assert float((fa.grad - fd).norm()) <= 1e-3 * float(fd.norm())

    def test_clean_branch_detached(self):
        fa = torch.rand(1, 2, 2, 2, requires_grad=True)
        fc = torch.rand(1, 2, 2, 2, requires_grad=True)
        loss_info([fa], [fc]).backward()
        assert fc.grad is None

    def test_list_mismatch(self):
        with pytest.raises(ValueError, match="lengths"):
            loss_info([torch.rand(1, 2, 2, 2)], [])


class TestTotalLoss:
    def test_zero_weights_reduce_to_base(self):
        w = LossWeights(lambda1=0.0, lambda2=0.0)
        out = total_loss(torch.tensor(1.3), torch.tensor(9.0), torch.tensor(4.0), torch.tensor(2.0), w)
        assert out.item() == pytest.approx(1.3)

    def test_arithmetic_with_default_weights(self):
        w = LossWeights()
        assert w.lambda1 == 20.0 and w.lambda2 == 1e-4
        parts = [torch.tensor(v, dtype=torch.float64) for v in (1.0, 0.5, 0.25, 8.0)]
        assert total_loss(*parts, w).item() == pytest.approx(16.0008, rel=1e-9)

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda1=-1.0)
        with pytest.raises(ValueError):
            LossWeights(lambda2=float("nan"))


def test_all_terms_drive_side_branch_gradients():
    torch.manual_seed(0)
    model = build_model(with_sr=True)
    model.eval()
    with torch.no_grad():
        for conv in model.side.project:
            conv.weight.normal_(0, 0.01)
    x_clean = torch.rand(2, 3, 32, 32)
    x_adv = (x_clean + 0.03 * torch.randn_like(x_clean)).clamp(0, 1)
    _, x_avg, feats = model.forward_detail(x_adv)
    with torch.no_grad():
        _, f_clean = model.side_detail(x_clean)
    for term in (loss_svd(x_avg, x_clean), loss_info(feats, f_clean), model.side.penalty()):
        grads = torch.autograd.grad(
            term, list(model.side.parameters()), retain_graph=True, allow_unused=True
        )
        total = sum(float(g.abs().sum()) for g in grads if g is not None)
        assert total > 0

import math

import pytest
import torch

from garb import denoiser as dn
from garb.conditioning import CondConfig
from garb.errors import ConfigurationError, ContractError
from garb.model import MgtModel


def small_config(**kw):
    defaults = dict(latent_channels=2, base_channels=8, channel_multipliers=(1, 2),
                    attention_levels=(0, 1), n_heads=1, d_k=4, d_v=4,
                    cond_dim=6, timestep_dim=10, norm_groups=4)
    defaults.update(kw)
    return dn.DenoiserConfig(**defaults)


class TestCrossAttention:
    def test_zero_out_weights_is_identity(self):
        attn = dn.CrossAttention(8, 6, n_heads=2, d_k=4, d_v=4)
        with torch.no_grad():
            attn.to_out.weight.zero_()
            attn.to_out.bias.zero_()
        x = torch.randn(2, 8, 4, 4)
        out = attn(x, torch.randn(2, 5, 6))
        assert torch.equal(out, x)

    def test_single_token_closed_form(self):
        # one K/V token: softmax over a single key is exactly 1, so the
        # residual branch is to_out(to_v(token)) at every position
        attn = dn.CrossAttention(4, 3, n_heads=1, d_k=2, d_v=2, norm_groups=1)
        x = torch.randn(1, 4, 2, 2)
        token = torch.randn(1, 1, 3)
        v = attn.to_v(token)  # (1,1,2)
        expected_add = attn.to_out(v)[0, 0]  # (4,)
        out = attn(x, token).detach()
        for i in range(2):
            for j in range(2):
                assert torch.allclose(out[0, :, i, j] - x[0, :, i, j],
                                      expected_add, atol=1e-6)

    def test_constant_keys_give_mean_of_values(self):
        # identical keys -> uniform attention -> output adds to_out(mean(V))
        attn = dn.CrossAttention(4, 3, n_heads=1, d_k=2, d_v=2, norm_groups=1)
        base = torch.randn(1, 1, 3)
        tokens = torch.randn(1, 5, 3)
        with torch.no_grad():
            attn.to_k.weight.zero_()  # all keys identical (zero)
        v_mean = attn.to_v(tokens).mean(dim=1)  # (1,2)
        expected_add = attn.to_out(v_mean)[0]
        x = torch.randn(1, 4, 2, 2)
        out = attn(x, tokens).detach()
        assert torch.allclose(out[0, :, 0, 0] - x[0, :, 0, 0], expected_add,
                              atol=1e-6)
        del base

    def test_token_permutation_changes_nothing_with_uniform_attention(self):
        # attention output is permutation-invariant in the token axis
        attn = dn.CrossAttention(4, 3, n_heads=1, d_k=2, d_v=2, norm_groups=1)
        x = torch.randn(1, 4, 2, 2)
        tokens = torch.randn(1, 5, 3)
        out_a = attn(x, tokens).detach()
        out_b = attn(x, tokens[:, [4, 2, 0, 1, 3]]).detach()
        assert torch.allclose(out_a, out_b, atol=1e-6)

    def test_token_content_matters(self):
        attn = dn.CrossAttention(4, 3, n_heads=1, d_k=2, d_v=2, norm_groups=1)
        x = torch.randn(1, 4, 2, 2)
        out_a = attn(x, torch.randn(1, 5, 3)).detach()
        out_b = attn(x, torch.randn(1, 5, 3)).detach()
        assert not torch.allclose(out_a, out_b, atol=1e-4)

    def test_softmax_scaling_matches_manual(self):
        attn = dn.CrossAttention(4, 3, n_heads=1, d_k=2, d_v=2, norm_groups=1)
        x = torch.randn(1, 4, 1, 1)
        tokens = torch.randn(1, 3, 3)
        q = attn.to_q(attn.norm(x).flatten(2).transpose(1, 2))[0]  # (1,2)
        k = attn.to_k(tokens)[0]  # (3,2)
        v = attn.to_v(tokens)[0]  # (3,2)
        w = torch.softmax(q @ k.T / math.sqrt(2), dim=-1)
        expected_add = attn.to_out(w @ v)[0]
        out = attn(x, tokens).detach()
        assert torch.allclose(out[0, :, 0, 0] - x[0, :, 0, 0], expected_add,
                              atol=1e-6)

    def test_cond_width_contract(self):
        attn = dn.CrossAttention(4, 3, n_heads=1, d_k=2, d_v=2, norm_groups=1)
        with pytest.raises(ContractError):
            attn(torch.randn(1, 4, 2, 2), torch.randn(1, 5, 4))


class TestResidualBlock:
    def test_zero_conv_is_skip(self):
        blk = dn.ResidualBlock(4, 4, 6, norm_groups=2)
        with torch.no_grad():
            blk.conv.weight.zero_()
            blk.conv.bias.zero_()
        x = torch.randn(2, 4, 3, 3)
        assert torch.equal(blk(x, torch.randn(2, 6)), x)

    def test_embedding_modulates_per_channel(self):
        # with the spatial conv set to identity-like 1x1 behaviour we can
        # verify the additive per-channel shift: out(e) - out(0) is constant
        # over space and equals conv(proj(e) broadcast)
        blk = dn.ResidualBlock(2, 2, 3, norm_groups=1)
        x = torch.randn(1, 2, 4, 4)
        e = torch.randn(1, 3)
        out_e = blk(x, e).detach()
        out_0 = blk(x, torch.zeros(1, 3)).detach()
        diff = out_e - out_0
        # difference is spatially constant away from borders (padding breaks
        # exact constancy at the edge rows/cols)
        inner = diff[:, :, 1:3, 1:3]
        assert torch.allclose(inner - inner[:, :, :1, :1], torch.zeros_like(inner),
                              atol=1e-5)
        # and it is nonzero: the embedding actually reaches the output
        assert diff.abs().max() > 1e-4

    def test_channel_change_uses_1x1_skip(self):
        blk = dn.ResidualBlock(2, 4, 3, norm_groups=1)
        assert isinstance(blk.skip, torch.nn.Conv2d)
        out = blk(torch.randn(1, 2, 4, 4), torch.randn(1, 3))
        assert out.shape == (1, 4, 4, 4)

    def test_hand_case_constant_input(self):
        # constant input per channel: GroupNorm(1 group over 2 channels) on a
        # constant-per-image input with distinct channel values
        blk = dn.ResidualBlock(1, 1, 2, norm_groups=1)
        with torch.no_grad():
            blk.norm.weight.fill_(1.0)
            blk.norm.bias.zero_()
            blk.proj.weight.zero_()
            blk.proj.bias.zero_()
            blk.conv.weight.zero_()
            blk.conv.weight[0, 0, 1, 1] = 1.0  # centre tap: identity conv
            blk.conv.bias.zero_()
        x = torch.full((1, 1, 3, 3), 5.0)
        out = blk(x, torch.zeros(1, 2)).detach()
        # norm maps the constant image to ~0, silu(0)=0, conv(0)=0 -> skip only
        assert torch.allclose(out, x, atol=1e-3)

    def test_embedding_width_contract(self):
        blk = dn.ResidualBlock(2, 2, 3, norm_groups=1)
        with pytest.raises(ContractError):
            blk(torch.randn(1, 2, 4, 4), torch.randn(1, 4))


class TestUNet:
    @pytest.mark.parametrize("size", [8, 16])
    @pytest.mark.parametrize("batch", [1, 3])
    def test_shape_preserved(self, size, batch):
        net = dn.UNet(small_config())
        x = torch.randn(batch, 2, size, size)
        out = net(x, torch.randn(batch, 5, 6), torch.randn(batch, 10))
        assert out.shape == x.shape

    def test_zero_init_output(self):
        net = dn.UNet(small_config())
        x = torch.randn(2, 2, 8, 8)
        out = net(x, torch.randn(2, 5, 6), torch.randn(2, 10))
        assert torch.equal(out, torch.zeros_like(out))

    def test_condition_sensitivity_after_perturbation(self):
        net = dn.UNet(small_config())
        with torch.no_grad():
            torch.nn.init.normal_(net.out_conv.weight, std=0.1)
        x = torch.randn(1, 2, 8, 8)
        e = torch.randn(1, 10)
        a = net(x, torch.randn(1, 5, 6), e).detach()
        b = net(x, torch.randn(1, 5, 6), e).detach()
        assert not torch.allclose(a, b, atol=1e-5)

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            small_config(n_heads=8, d_k=16)  # exceeds widest feature size
        with pytest.raises(ConfigurationError):
            small_config(attention_levels=(5,))


def tiny_model():
    cond_cfg = CondConfig(image_size=16, patch_size=8, encoder_dim=6, n_tokens=3,
                          token_dim=6, embed_dim=10, n_timesteps=20)
    den_cfg = small_config()
    return MgtModel(cond_cfg, den_cfg)


class TestMgtModel:
    def test_encode_condition_shape(self):
        model = tiny_model()
        tokens = model.encode_condition(torch.randn(2, 3, 16, 16))
        assert tokens.shape == (2, 3, 6)

    def test_predict_noise_shapes_scalar_and_vector(self):
        model = tiny_model()
        x = torch.randn(2, 2, 8, 8)
        tokens = torch.randn(2, 3, 6)
        out1 = model.predict_noise(x, 5, tokens, 1)
        out2 = model.predict_noise(x, torch.tensor([5, 5]), tokens,
                                   torch.tensor([1, 1]))
        assert out1.shape == x.shape
        assert torch.allclose(out1, out2, atol=1e-7)

    def test_zero_init_predicts_zero(self):
        model = tiny_model()
        out = model.predict_noise(torch.randn(2, 2, 8, 8), 3,
                                  torch.randn(2, 3, 6), 2)
        assert torch.equal(out, torch.zeros_like(out))

    def test_class_sensitivity_after_perturbation(self):
        model = tiny_model()
        with torch.no_grad():
            torch.nn.init.normal_(model.unet.out_conv.weight, std=0.1)
        x = torch.randn(1, 2, 8, 8)
        tokens = torch.randn(1, 3, 6)
        a = model.predict_noise(x, 5, tokens, 1).detach()
        b = model.predict_noise(x, 5, tokens, 2).detach()
        assert not torch.allclose(a, b, atol=1e-6)

    def test_mismatched_dims_rejected(self):
        cond_cfg = CondConfig(image_size=16, patch_size=8, encoder_dim=6,
                              n_tokens=3, token_dim=7, embed_dim=10,
                              n_timesteps=20)
        with pytest.raises(ConfigurationError):
            MgtModel(cond_cfg, small_config())

    def test_finite_difference_gradient(self):
        # central-difference check of d(loss)/d(theta) on a float64 model
        torch.manual_seed(1)
        model = tiny_model().double()
        with torch.no_grad():
            torch.nn.init.normal_(model.unet.out_conv.weight, std=0.05)
        n_params = sum(p.numel() for p in model.parameters())
        assert n_params <= 50_000
        x = torch.randn(1, 2, 8, 8, dtype=torch.float64)
        ref = torch.randn(1, 3, 16, 16, dtype=torch.float64)
        target = torch.randn(1, 2, 8, 8, dtype=torch.float64)

        def loss_fn():
            tokens = model.encode_condition(ref)
            pred = model.predict_noise(x, 5, tokens, 2)
            return torch.mean((pred - target) ** 2)

        loss = loss_fn()
        loss.backward()
        rng = torch.Generator().manual_seed(0)
        params = [p for p in model.parameters() if p.grad is not None
                  and p.grad.abs().max() > 0]
        checked = 0
        h = 1e-6
        for p in params:
            if checked >= 10:
                break
            flat_idx = int(torch.randint(p.numel(), (1,), generator=rng))
            orig = float(p.data.view(-1)[flat_idx])
            with torch.no_grad():
                p.data.view(-1)[flat_idx] = orig + h
                lp = float(loss_fn())
                p.data.view(-1)[flat_idx] = orig - h
                lm = float(loss_fn())
            p.data.view(-1)[flat_idx] = orig
            numeric = (lp - lm) / (2 * h)
            analytic = float(p.grad.view(-1)[flat_idx])
            denom = max(abs(numeric), abs(analytic), 1e-8)
            assert abs(numeric - analytic) / denom < 1e-3, (
                f"grad mismatch: numeric={numeric}, analytic={analytic}")
            checked += 1
        assert checked == 10

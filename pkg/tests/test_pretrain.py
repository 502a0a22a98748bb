import numpy as np
import pytest
import torch

from diffuad.nets import ConditionedUNet, ContextEncoder, EncoderConfig, UNetConfig
from diffuad.phantom import PhantomSpec, generate_phantom
from diffuad.pretrain import (
    MaskedDecoder,
    PretrainConfig,
    masked_reconstruction_loss,
    pretrain_encoder,
    sample_mask,
)

ENC = EncoderConfig(widths=(4, 8), cond_dim=8, groupnorm_groups=4)


class TestSampleMask:
    def test_sixty_five_percent_of_8x8(self):
        pattern = sample_mask((8, 8), 0.65, seed=0)
        assert int(pattern.masked.sum()) == 41  # floor(0.65 * 64)

    def test_small_ratio_masks_nothing(self):
        pattern = sample_mask((2, 2), 0.01, seed=0)
        assert int(pattern.masked.sum()) == 0

    def test_deterministic(self):
        a = sample_mask((4, 4), 0.65, seed=7)
        b = sample_mask((4, 4), 0.65, seed=7)
        assert np.array_equal(a.masked, b.masked)
        assert not np.array_equal(a.masked, sample_mask((4, 4), 0.65, seed=8).masked)

    def test_ratio_bounds(self):
        with pytest.raises(ValueError):
            sample_mask((4, 4), 0.0, seed=0)
        with pytest.raises(ValueError):
            sample_mask((4, 4), 1.0, seed=0)

    def test_pixel_mask_expansion(self):
        pattern = sample_mask((2, 2), 0.6, seed=1, patch_size=3)
        px = pattern.pixel_mask()
        assert px.shape == (6, 6)
        assert int(px.sum()) == int(pattern.masked.sum()) * 9


class TestMaskedLoss:
    def test_nothing_masked_contributes_zero(self):
        pred = torch.randn(2, 1, 8, 8)
        target = torch.randn(2, 1, 8, 8)
        mask = torch.zeros(2, 1, 8, 8, dtype=torch.bool)
        assert masked_reconstruction_loss(pred, target, mask).item() == 0.0

    def test_restricted_to_masked_pixels(self):
        pred = torch.zeros(1, 1, 4, 4)
        target = torch.ones(1, 1, 4, 4)
        mask = torch.zeros(1, 1, 4, 4, dtype=torch.bool)
        mask[0, 0, 0, :2] = True
        assert masked_reconstruction_loss(pred, target, mask).item() == pytest.approx(1.0)

    def test_gradient_zero_on_unmasked_outputs(self):
        pred = torch.randn(1, 1, 4, 4, requires_grad=True)
        target = torch.randn(1, 1, 4, 4) + 2.0  # keep |diff| away from 0
        mask = torch.zeros(1, 1, 4, 4, dtype=torch.bool)
        mask[0, 0, 1, 1] = True
        mask[0, 0, 2, 3] = True
        loss = masked_reconstruction_loss(pred, target, mask)
        (grad,) = torch.autograd.grad(loss, pred)
        assert torch.all(grad[~mask] == 0.0)
        assert torch.all(grad[mask] != 0.0)


class TestPretraining:
    def _volumes(self, n=10):
        return [generate_phantom(PhantomSpec(seed=s))[0] for s in range(n)]

    def test_loss_decreases_over_fifty_steps(self):
        torch.manual_seed(0)
        encoder = ContextEncoder(ENC)
        decoder = MaskedDecoder(8, 32)
        cfg = PretrainConfig(epochs=1, steps_per_epoch=50, batch_size=8, lr=1e-3, seed=0)
        losses = pretrain_encoder(encoder, decoder, self._volumes(), cfg)
        assert len(losses) == 50
        assert losses[-1] < losses[0]

    def test_weight_shapes_preserved(self):
        torch.manual_seed(0)
        encoder = ContextEncoder(ENC)
        before = {k: v.shape for k, v in encoder.state_dict().items()}
        decoder = MaskedDecoder(8, 32)
        cfg = PretrainConfig(epochs=1, steps_per_epoch=3, batch_size=4, seed=0)
        pretrain_encoder(encoder, decoder, self._volumes(3), cfg)
        after = {k: v.shape for k, v in encoder.state_dict().items()}
        assert before == after

    def test_empty_dataset_rejected(self):
        encoder = ContextEncoder(ENC)
        decoder = MaskedDecoder(8, 32)
        with pytest.raises(ValueError, match="empty"):
            pretrain_encoder(encoder, decoder, [], PretrainConfig())

    def test_pretrained_encoder_plugs_into_unet(self):
        torch.manual_seed(0)
        encoder = ContextEncoder(ENC)
        decoder = MaskedDecoder(8, 32)
        cfg = PretrainConfig(epochs=1, steps_per_epoch=2, batch_size=4, seed=0)
        pretrain_encoder(encoder, decoder, self._volumes(2), cfg)
        unet = ConditionedUNet(UNetConfig(level_channels=(8, 16, 16), cond_dim=8, groupnorm_groups=4))
        x = torch.randn(2, 1, 32, 32)
        with torch.no_grad():
            out = unet(x, 100, encoder(x))
        assert out.shape == x.shape

    def test_deterministic(self):
        results = []
        for _ in range(2):
            torch.manual_seed(0)
            encoder = ContextEncoder(ENC)
            decoder = MaskedDecoder(8, 32)
            cfg = PretrainConfig(epochs=1, steps_per_epoch=4, batch_size=4, seed=3)
            losses = pretrain_encoder(encoder, decoder, self._volumes(3), cfg)
            results.append(losses)
        assert results[0] == results[1]

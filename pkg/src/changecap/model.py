"""Full change-captioning model: siamese encoder, fusion, caption decoder."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .decoder import CaptionDecoder, DecodedCaption, beam_decode, greedy_decode
from .encoder import SpatialChannelEncoder, map_to_tokens
from .errors import DimensionError
from .fusion import DifferenceFusion
from .nn import Module
from .vocab import Vocabulary


class ChangeCaptionModel(Module):
    """End-to-end model over a bi-temporal image pair.

    One encoder instance serves both temporal inputs, so every weight is
    shared between the two branches by construction.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence([seed, 0xC0DE])))
        dtype = cfg.np_dtype
        self.encoder = SpatialChannelEncoder(cfg, rng, dtype=dtype)
        self.fusion = DifferenceFusion(cfg, rng, dtype=dtype)
        self.decoder = CaptionDecoder(cfg, rng, dtype=dtype)

    def _as_tensor(self, images) -> Tensor:
        if isinstance(images, Tensor):
            return images
        return Tensor(np.asarray(images, dtype=self.cfg.np_dtype))

    def encode(self, images, precomputed: bool = False) -> Tensor:
        """Encode one temporal branch to a [B,C,h,w] feature map.

        With ``precomputed=True`` the input is taken to be backbone
        features [.., C_o, h, w] and the CNN is bypassed.
        """
        x = self._as_tensor(images)
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        if precomputed:
            if x.shape[1] != self.cfg.backbone_channels:
                raise DimensionError(
                    f"precomputed features have {x.shape[1]} channels, expected {self.cfg.backbone_channels}")
            return self.encoder.encode_features(x)
        if x.shape[1] != 3:
            raise DimensionError(f"images must have 3 channels, got {x.shape[1]}")
        return self.encoder(x)

    def memory(self, before, after, precomputed: bool = False) -> Tensor:
        """Fused [B,HW,C] memory for the decoder."""
        z1 = self.encode(before, precomputed)
        z2 = self.encode(after, precomputed)
        return map_to_tokens(self.fusion(z1, z2))

    def forward(self, before, after, token_ids, rng: np.random.Generator | None = None,
                precomputed: bool = False) -> Tensor:
        """Teacher-forced logits [B,T,|V|]."""
        return self.decoder(token_ids, self.memory(before, after, precomputed), rng)

    def caption(self, before, after, vocab: Vocabulary, beam_width: int = 0,
                precomputed: bool = False) -> DecodedCaption:
        """Decode a caption for one pair (greedy unless beam_width > 1)."""
        was_training = self.training
        self.eval()
        try:
            with ad.no_grad():
                mem = self.memory(before, after, precomputed)
            if beam_width and beam_width > 1:
                return beam_decode(self.decoder, mem, vocab, beam_width)
            return greedy_decode(self.decoder, mem, vocab)
        finally:
            self.train(was_training)

    def estimated_bytes(self) -> int:
        """Rough parameter + gradient + optimizer memory footprint."""
        per_value = 8 if self.cfg.dtype == "float64" else 4
        return self.num_parameters() * per_value * 4

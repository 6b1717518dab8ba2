"""UACANet assembly: backbone, three PAA encoders, PAA decoder, three UACA stages."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import PAADecoder, PAAEncoder
from .autodiff import Tensor
from .nn import ConvNormAct, Module
from .uaca import UACA


@dataclass
class ModelConfig:
    """Network hyper-parameters.

    ``width`` is the channel count of every conv outside the backbone (32 for
    the small model, 256 for the large one). ``backbone_widths`` are the
    channels of the stride 2, 4, 8 and 16 stages.
    """

    width: int = 32
    side: int = 352
    backbone_widths: tuple = (16, 32, 64, 128)
    disable_paa: bool = False
    disable_uncertainty: bool = False
    reduction: int = 8
    zero_init_heads: bool = False
    seed: int = 0

    def __post_init__(self):
        self.backbone_widths = tuple(int(w) for w in self.backbone_widths)
        if self.side % 32:
            raise ValueError(f"side must be divisible by 32, got {self.side}")
        if len(self.backbone_widths) != 4:
            raise ValueError(f"backbone_widths needs 4 entries, got {self.backbone_widths}")
        if self.width % self.reduction:
            raise ValueError(f"width {self.width} not divisible by reduction {self.reduction}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["backbone_widths"] = list(self.backbone_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise KeyError(f"unknown model config keys: {unknown}")
        return cls(**d)


class BackboneLite(Module):
    """Plain conv backbone; stage k halves the spatial size of stage k-1.

    Each stage is a stride-2 conv block followed by a stride-1 conv block.
    """

    def __init__(self, widths=(16, 32, 64, 128), rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stages = []
        cin = 3
        for w in widths:
            self.stages.append([ConvNormAct(cin, w, 3, rng, stride=2),
                                ConvNormAct(w, w, 3, rng)])
            cin = w
        self.widths = tuple(widths)

    def forward(self, image: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Return features at strides 4, 8 and 16."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected [B, 3, S, S] image, got {image.shape}")
        if image.shape[2] % 32 or image.shape[3] % 32:
            raise ValueError(f"image side must be divisible by 32, got {image.shape[2:]}")
        feats = []
        x = image
        for down, conv in self.stages:
            x = conv(down(x))
            feats.append(x)
        return feats[1], feats[2], feats[3]


class UACANet(Module):
    def __init__(self, config: ModelConfig | None = None):
        self.config = cfg = config if config is not None else ModelConfig()
        rng = np.random.default_rng(cfg.seed)
        w = cfg.width
        use_paa = not cfg.disable_paa
        self.backbone = BackboneLite(cfg.backbone_widths, rng)
        self.encoders = [PAAEncoder(c, w, rng, use_paa=use_paa, reduction=cfg.reduction)
                         for c in cfg.backbone_widths[1:]]
        self.decoder = PAADecoder(w, rng, use_paa=use_paa, reduction=cfg.reduction)
        self.stages = [UACA(2 * w, w, rng, uncertainty=not cfg.disable_uncertainty,
                            zero_init_head=cfg.zero_init_heads) for _ in range(3)]

    def forward_stages(self, image: Tensor) -> dict:
        """Run the network and return the stage-resolution logits and features."""
        f2, f3, f4 = self.backbone(image)
        e2, e3, e4 = (enc(f) for enc, f in zip(self.encoders, (f2, f3, f4)))
        feat, d_logit = self.decoder(e2, e3, e4)
        logits = [d_logit]
        guidance = d_logit
        # coarse to fine: /16, /8, /4
        for stage, e in zip(self.stages, (e4, e3, e2)):
            h, w = e.shape[-2:]
            x = ad.concat_channels([e, ad.bilinear_resize(feat, h, w)])
            feat, guidance = stage(x, guidance)
            logits.append(guidance)
        return {"logits": logits, "encoded": (e2, e3, e4)}

    def forward(self, image: Tensor) -> list[Tensor]:
        """Four saliency logits (decoder, UACA 1-3), each upsampled to ``[B, 1, S, S]``."""
        S_h, S_w = image.shape[-2:]
        return [ad.bilinear_resize(lg, S_h, S_w) for lg in self.forward_stages(image)["logits"]]

    def predict_proba(self, image: Tensor) -> np.ndarray:
        with ad.no_grad():
            return ad.sigmoid(self.forward(image)[-1]).data

    def area_maps(self) -> list:
        """Area maps recorded by each UACA stage during the last forward."""
        return [s.last_areas for s in self.stages]

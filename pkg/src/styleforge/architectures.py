"""ArtNet, PhotoNet and the vanilla auto-encoder.

All three share the frozen VGG-19 encoder and a decoder that mirrors it:

    bottleneck (relu5_1, or the fused FA map)
    decoder stage k = 1..4: 2x nearest upsample -> 3x3 conv -> ReLU
                            [-> NS fusion with IN(encoder stage 5-k)]
    output: 3x3 conv, linear

Transfer modules may sit at the bottleneck, at the end of each decoder stage
and on each normalized skip, depending on the MST setting.
"""

from collections import Counter
from dataclasses import asdict, dataclass, replace
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import transfer as tr
from .codec import MIN_SIZE, STAGE_CHANNELS, conv_pad
from .errors import FASpecMismatch, ImageTooSmall, InvalidSpec, UntrainedModel


class Kind(str, Enum):
    VANILLA = "vanilla"
    ARTNET = "artnet"
    PHOTONET = "photonet"


class MST(str, Enum):
    NONE = "none"
    MST3 = "3"
    MST5 = "5"
    INF = "inf"


class TransferKind(str, Enum):
    NONE = "none"
    ADAIN = "adain"
    WCT = "wct"


MIRRORED_CHANNELS = (512, 256, 128, 64)
FA_CHANNELS = sum(STAGE_CHANNELS)  # 1472

BOTTLENECK = "bottleneck"
DECODER_POINTS = ("dec1", "dec2", "dec3", "dec4")
SKIP_POINTS = ("skip1", "skip2", "skip3", "skip4")


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: Kind
    use_fa: bool
    use_ns: bool
    mst: MST = MST.NONE
    transfer_kind: TransferKind = TransferKind.NONE
    decoder_channels: tuple = MIRRORED_CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "mst", MST(self.mst))
        object.__setattr__(self, "transfer_kind", TransferKind(self.transfer_kind))
        object.__setattr__(self, "decoder_channels", tuple(int(c) for c in self.decoder_channels))

    @classmethod
    def vanilla(cls, transfer="none", **kw):
        return cls(Kind.VANILLA, use_fa=False, use_ns=False, mst=MST.NONE, transfer_kind=transfer, **kw)

    @classmethod
    def artnet(cls, transfer="wct", mst="3", use_fa=True, **kw):
        return cls(Kind.ARTNET, use_fa=use_fa, use_ns=False, mst=mst, transfer_kind=transfer, **kw)

    @classmethod
    def photonet(cls, transfer="wct", mst="inf", use_fa=True, **kw):
        return cls(Kind.PHOTONET, use_fa=use_fa, use_ns=True, mst=mst, transfer_kind=transfer, **kw)

    def validate(self):
        if self.mst is MST.INF and not self.use_ns:
            raise InvalidSpec("MST-inf requires use_ns=true")
        if self.kind is Kind.ARTNET and self.use_ns:
            raise InvalidSpec("ArtNet requires use_ns=false")
        if self.kind is Kind.PHOTONET and not self.use_ns:
            raise InvalidSpec("PhotoNet requires use_ns=true")
        if self.kind is Kind.VANILLA and (self.use_fa or self.use_ns):
            raise InvalidSpec("VanillaAE requires use_fa=false and use_ns=false")
        if len(self.decoder_channels) != 4 or min(self.decoder_channels) < 1:
            raise InvalidSpec("decoder_channels must list 4 positive channel counts")
        if self.decoder_channels != MIRRORED_CHANNELS and any(p in placement(self) for p in DECODER_POINTS):
            raise InvalidSpec("decoder-stage transfers require the mirrored channel plan (512, 256, 128, 64)")
        return self

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        d["mst"] = self.mst.value
        d["transfer_kind"] = self.transfer_kind.value
        d["decoder_channels"] = list(self.decoder_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def with_transfer(self, transfer_kind):
        return replace(self, transfer_kind=TransferKind(transfer_kind))

    def label(self):
        parts = [self.kind.value]
        if self.use_fa:
            parts.append("FA")
        if self.use_ns:
            parts.append("NS")
        if self.mst is not MST.NONE:
            parts.append(f"MST-{self.mst.value}")
        return "+".join(parts) + f"({self.transfer_kind.value})"


def placement(spec):
    """Set of points where a transfer module is applied for ``spec``."""
    if spec.transfer_kind is TransferKind.NONE:
        return frozenset()
    points = {BOTTLENECK}
    if spec.mst is MST.MST3:
        points |= set(DECODER_POINTS[:2])
    elif spec.mst in (MST.MST5, MST.INF):
        points |= set(DECODER_POINTS)
    if spec.mst is MST.INF:
        points |= set(SKIP_POINTS)
    return frozenset(points)


def _encoder_stage_for(point):
    """1-based encoder stage whose style statistics feed a decoder/skip point."""
    if point in DECODER_POINTS:
        return 5 - int(point[-1])
    return int(point[-1])


def pool_to(x, size):
    """Average-pool (N, C, H, W) down to spatial ``size``."""
    return F.adaptive_avg_pool2d(x, size)


class Model(nn.Module):
    def __init__(self, spec, encoder):
        super().__init__()
        self.spec = spec.validate()
        # the encoder is shared and frozen, so it is kept out of the module tree
        object.__setattr__(self, "encoder", encoder)
        self.trained = False

        plan = spec.decoder_channels
        if spec.use_fa:
            self.fa = nn.Conv2d(FA_CHANNELS, STAGE_CHANNELS[4], 1)
        in_ch = STAGE_CHANNELS[4]
        for k, out_ch in enumerate(plan, start=1):
            setattr(self, f"dec{k}", nn.Conv2d(in_ch, out_ch, 3))
            if spec.use_ns:
                skip_ch = STAGE_CHANNELS[4 - k]
                setattr(self, f"ns{k}", nn.Conv2d(out_ch + skip_ch, out_ch, 3))
            in_ch = out_ch
        self.out = nn.Conv2d(in_ch, 3, 3)

    def decoder_params(self):
        return dict(self.named_parameters())

    def to(self, *args, **kwargs):
        self.encoder.to(*args, **kwargs)
        return super().to(*args, **kwargs)

    def encode(self, images, trace=None):
        if trace is not None:
            trace["encoder"] += 1
        with torch.no_grad():
            return self.encoder(images)

    def aggregate(self, stages):
        if not self.spec.use_fa:
            raise FASpecMismatch("aggregate_features requires a spec with use_fa=true")
        size = stages[4].shape[-2:]
        pooled = [pool_to(s, size) for s in stages[:4]] + [stages[4]]
        return F.relu(self.fa(torch.cat(pooled, dim=1)))

    def _transfer(self, point, x, ctx, beta, trace):
        if ctx is None or point not in ctx.points:
            return x
        if trace is not None:
            trace["transfer"] += 1
        stats, eig = ctx.points[point]
        outs = []
        for n in range(x.shape[0]):
            if self.spec.transfer_kind is TransferKind.ADAIN:
                moved = tr.adain(x[n], stats)
            else:
                moved = tr.wct(x[n], eig)
            outs.append(tr.blend(moved, x[n], beta))
        return torch.stack(outs)

    def bottleneck(self, stages, ctx=None, beta=1.0, trace=None):
        x = self.aggregate(stages) if self.spec.use_fa else stages[4]
        return self._transfer(BOTTLENECK, x, ctx, beta, trace)

    def decode(self, stages, ctx=None, beta=1.0, trace=None):
        """Decoder pass from encoder stages to an unclipped image batch."""
        if trace is not None:
            trace["decoder"] += 1
        x = self.bottleneck(stages, ctx, beta, trace)
        for k in range(1, 5):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.relu(getattr(self, f"dec{k}")(conv_pad(x)))
            x = self._transfer(f"dec{k}", x, ctx, beta, trace)
            if self.spec.use_ns:
                enc_stage = 5 - k
                skip = stages[enc_stage - 1]
                skip = torch.stack([tr.instance_norm(s) for s in skip])
                skip = self._transfer(f"skip{enc_stage}", skip, ctx, beta, trace)
                if skip.shape[-2:] != x.shape[-2:]:
                    x = x[..., : skip.shape[-2], : skip.shape[-1]]
                x = F.relu(getattr(self, f"ns{k}")(conv_pad(torch.cat([x, skip], dim=1))))
        return self.out(conv_pad(x))

    def forward(self, images):
        """Reconstruction graph used for training (no transfers, no clipping)."""
        return self.decode(self.encode(images))


def build(spec, encoder, seed=0):
    """Build a model for ``spec`` with Kaiming-uniform kernels and zero biases."""
    model = Model(spec, encoder)
    gen = torch.Generator().manual_seed(int(seed))
    for name, param in model.named_parameters():
        if name.endswith(".weight"):
            nn.init.kaiming_uniform_(param, nonlinearity="relu", generator=gen)
        else:
            nn.init.zeros_(param)
    return model


def aggregate_features(stages, model):
    if stages[0].dim() == 3:
        return model.aggregate([s.unsqueeze(0) for s in stages])[0]
    return model.aggregate(stages)


@dataclass
class TransferContext:
    """Per-placement style statistics: point -> (ChannelStats, CovEigensystem or None)."""

    points: dict


def prepare_context(model, style_stages):
    """Style-side statistics for every placement point of ``model``."""
    spec = model.spec
    wanted = placement(spec)
    feats = {}
    with torch.no_grad():
        if BOTTLENECK in wanted:
            feats[BOTTLENECK] = model.bottleneck(style_stages)[0]
        for point in wanted - {BOTTLENECK}:
            f = style_stages[_encoder_stage_for(point) - 1][0]
            feats[point] = tr.instance_norm(f) if point in SKIP_POINTS else f
    points = {}
    for point, f in feats.items():
        eig = tr.cov_eigensystem(f) if spec.transfer_kind is TransferKind.WCT else None
        points[point] = (tr.channel_stats(f), eig)
    return TransferContext(points)


def _check_image(image):
    if image.dim() != 3 or image.shape[0] != 3:
        raise ValueError(f"expected an RGB image tensor (3, H, W), got {tuple(image.shape)}")
    h, w = image.shape[-2:]
    if h < MIN_SIZE or w < MIN_SIZE:
        raise ImageTooSmall(f"image is {h}x{w}; need at least {MIN_SIZE}x{MIN_SIZE}")


def pad_to_multiple(image, multiple=16):
    h, w = image.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return image
    return F.pad(image.unsqueeze(0), (0, pw, 0, ph), mode="reflect")[0]


def _run(model, content, style, beta, trace):
    _check_image(content)
    h, w = content.shape[-2:]
    device = next(model.parameters()).device
    x = pad_to_multiple(content).unsqueeze(0).to(device)
    ctx = None
    with torch.no_grad():
        if style is not None:
            _check_image(style)
            s = pad_to_multiple(style).unsqueeze(0).to(device)
            ctx = prepare_context(model, model.encode(s, trace))
        out = model.decode(model.encode(x, trace), ctx, beta, trace)
    return out[0, :, :h, :w].clamp(0.0, 1.0)


def stylize(model, content, style, beta=1.0, allow_untrained=False, trace=None):
    """Single-pass stylization of ``content`` with the statistics of ``style``.

    Images are (3, H, W) tensors in [0, 1]. ``trace``, if given, is a Counter
    that receives encoder/decoder/transfer call counts.
    """
    if not model.trained and not allow_untrained:
        raise UntrainedModel("model has no trained decoder; pass allow_untrained to override")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0,1], got {beta}")
    return _run(model, content, style, beta, trace)


def reconstruct(model, image, trace=None):
    return _run(model, image, None, 0.0, trace)


def new_trace():
    return Counter()


"""Spatio-temporal multi-task segmentation/classification network.

Per frame: a U-style encoder feeds a convolutional LSTM bottleneck whose
hidden state drives (a) a frame classification head and (b) an attention-
gated decoder whose per-level side outputs are aggregated into the final
segmentation probability map. The recurrent state makes predictions causal
in frame order; state is reset at the start of every clip.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import AblationFlags, NetConfig
from .errors import ContractError


@dataclass
class FramePrediction:
    """Per-frame inference output (numpy, detached)."""

    seg_prob: np.ndarray  # (input_size, input_size), values in [0, 1]
    class_logits: Optional[np.ndarray]  # (4,) or None when the branch is off
    side_probs: List[np.ndarray]  # per-level upsampled maps, values in [0, 1]


class ConvBlock(nn.Module):
    """Conv3x3-BN-ReLU-Conv3x3-BN-ReLU-Dropout2d, spatial size preserved."""

    def __init__(self, in_ch: int, out_ch: int, dropout: float):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.drop = nn.Dropout2d(dropout)
        self.in_channels = in_ch

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ContractError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        return self.drop(x)


class ConvLSTMCell(nn.Module):
    """Convolutional LSTM cell; gates share one convolution over (x, h).

    Gate order along the output channels is input, forget, output, candidate.
    """

    def __init__(self, in_ch: int, hidden_ch: int, kernel: int = 3):
        super().__init__()
        self.hidden_ch = hidden_ch
        self.gates = nn.Conv2d(in_ch + hidden_ch, 4 * hidden_ch, kernel, padding=kernel // 2)

    def init_state(self, batch: int, height: int, width: int, device, dtype):
        shape = (batch, self.hidden_ch, height, width)
        return (
            torch.zeros(shape, device=device, dtype=dtype),
            torch.zeros(shape, device=device, dtype=dtype),
        )

    def forward(self, x, state):
        h, c = state
        if h.shape != c.shape or h.shape[1] != self.hidden_ch or h.shape[-2:] != x.shape[-2:]:
            raise ContractError(
                f"state shape {tuple(h.shape)} incompatible with input {tuple(x.shape)}"
            )
        z = self.gates(torch.cat([x, h], dim=1))
        i, f, o, g = torch.chunk(z, 4, dim=1)
        i, f, o = torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o)
        g = torch.tanh(g)
        c_next = f * c + i * g
        h_next = o * torch.tanh(c_next)
        return h_next, (h_next, c_next)


class AttentionGate(nn.Module):
    """Additive attention over a skip connection.

    alpha = sigmoid(psi(relu(W_x x + W_g up(g)))), output = alpha * x.
    The gating signal comes from one level coarser, so it is upsampled 2x
    (bilinear) before the addition.
    """

    def __init__(self, x_ch: int, g_ch: int):
        super().__init__()
        inter = max(x_ch // 2, 1)
        self.w_x = nn.Conv2d(x_ch, inter, 1, bias=False)
        self.w_g = nn.Conv2d(g_ch, inter, 1, bias=True)
        self.psi = nn.Conv2d(inter, 1, 1, bias=True)

    def forward(self, x, g):
        g_up = F.interpolate(g, scale_factor=2, mode="bilinear", align_corners=False)
        if g_up.shape[-2:] != x.shape[-2:]:
            raise ContractError(
                f"gating signal upsamples to {tuple(g_up.shape[-2:])}, skip is {tuple(x.shape[-2:])}"
            )
        alpha = torch.sigmoid(self.psi(F.relu(self.w_x(x) + self.w_g(g_up))))
        return alpha * x, alpha


class MultiTaskVideoNet(nn.Module):
    """Encoder, ConvLSTM bottleneck, attention-gated decoder, two task heads.

    Channel widths follow n, 2n, 4n, 8n, 16n, 8n, 4n, 2n, n with skips taken
    at n, 2n, 4n, 8n and a (input_size/16)^2 x 16n bottleneck.
    """

    def __init__(self, config: NetConfig, flags: Optional[AblationFlags] = None):
        super().__init__()
        self.config = config
        self.flags = flags if flags is not None else AblationFlags()
        n = config.base_width
        p = config.dropout_block

        self.enc0 = ConvBlock(1, n, p)  # input block, full resolution
        self.enc1 = ConvBlock(n, 2 * n, p)
        self.enc2 = ConvBlock(2 * n, 4 * n, p)
        self.enc3 = ConvBlock(4 * n, 8 * n, p)
        self.bottleneck = ConvBlock(8 * n, 16 * n, p)
        self.pool = nn.MaxPool2d(2, 2)

        self.convlstm = ConvLSTMCell(16 * n, 16 * n, config.convlstm_kernel)

        if self.flags.attention_gates:
            self.ag3 = AttentionGate(8 * n, 16 * n)
            self.ag2 = AttentionGate(4 * n, 8 * n)
            self.ag1 = AttentionGate(2 * n, 4 * n)
            self.ag0 = AttentionGate(n, 2 * n)

        self.dec1 = ConvBlock(16 * n + 8 * n, 8 * n, p)
        self.dec2 = ConvBlock(8 * n + 4 * n, 4 * n, p)
        self.dec3 = ConvBlock(4 * n + 2 * n, 2 * n, p)
        self.dec4 = ConvBlock(2 * n + n, n, p)

        if self.flags.stacked_module:
            self.side1 = nn.Conv2d(8 * n, 1, 3, padding=1)
            self.side2 = nn.Conv2d(4 * n, 1, 3, padding=1)
            self.side3 = nn.Conv2d(2 * n, 1, 3, padding=1)
            self.side4 = nn.Conv2d(n, 1, 3, padding=1)
        else:
            self.seg_head = nn.Conv2d(n, 1, 3, padding=1)

        if self.flags.classification_branch:
            s = config.grid_size
            self.cls_pool = nn.AdaptiveAvgPool2d((s, s))
            self.cls_drop = nn.Dropout2d(config.dropout_cls)
            self.cls_fc = nn.Linear(s * s * 16 * n, config.num_classes)

        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Linear):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="linear")
                nn.init.zeros_(m.bias)

    # ------------------------------------------------------------- sub-paths

    def encode(self, frame):
        """One frame (B, 1, H, W) -> four skips + bottleneck features."""
        if frame.dim() != 4 or frame.shape[1] != 1:
            raise ContractError(f"expected (B, 1, H, W) frame, got {tuple(frame.shape)}")
        if frame.shape[-1] != self.config.input_size or frame.shape[-2] != self.config.input_size:
            raise ContractError(
                f"expected {self.config.input_size}x{self.config.input_size} input, "
                f"got {tuple(frame.shape[-2:])}"
            )
        s0 = self.enc0(frame)
        s1 = self.enc1(self.pool(s0))
        s2 = self.enc2(self.pool(s1))
        s3 = self.enc3(self.pool(s2))
        bottom = self.bottleneck(self.pool(s3))
        return (s0, s1, s2, s3), bottom

    def decode(self, h_t, skips):
        """Hidden state + skips -> per-level decoder features (coarse first)."""
        s0, s1, s2, s3 = skips

        def up(x):
            return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

        if self.flags.attention_gates:
            g3, _ = self.ag3(s3, h_t)
        else:
            g3 = s3
        d1 = self.dec1(torch.cat([up(h_t), g3], dim=1))

        g2 = self.ag2(s2, d1)[0] if self.flags.attention_gates else s2
        d2 = self.dec2(torch.cat([up(d1), g2], dim=1))

        g1 = self.ag1(s1, d2)[0] if self.flags.attention_gates else s1
        d3 = self.dec3(torch.cat([up(d2), g1], dim=1))

        g0 = self.ag0(s0, d3)[0] if self.flags.attention_gates else s0
        d4 = self.dec4(torch.cat([up(d3), g0], dim=1))
        return d1, d2, d3, d4

    def segment(self, decoder_feats) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        """Decoder features -> (seg_prob, side_probs), all at input_size."""
        size = (self.config.input_size, self.config.input_size)

        def up_full(x):
            if x.shape[-2:] == size:
                return x
            return F.interpolate(x, size=size, mode="bilinear", align_corners=False)

        if not self.flags.stacked_module:
            logit = up_full(self.seg_head(decoder_feats[3]))
            prob = torch.sigmoid(logit)
            return prob, [prob]
        d1, d2, d3, d4 = decoder_feats
        side_logits = [
            up_full(self.side1(d1)),
            up_full(self.side2(d2)),
            up_full(self.side3(d3)),
            up_full(self.side4(d4)),
        ]
        seg_prob = torch.sigmoid(torch.stack(side_logits, dim=0).sum(dim=0))
        return seg_prob, [torch.sigmoid(s) for s in side_logits]

    def classify(self, h_t):
        pooled = self.cls_drop(self.cls_pool(h_t))
        return self.cls_fc(pooled.flatten(1))

    # ---------------------------------------------------------------- forward

    def forward(self, clip):
        """clip: (B, T, 1, H, W) -> (seg_probs (B,T,1,H,W), logits (B,T,4) or
        None, side_probs list of (B,T,1,H,W)).

        Frames are processed strictly in order through the recurrent
        bottleneck, which is zero-initialized per clip; outputs for frame t
        never see frames after t.
        """
        if clip.dim() != 5:
            raise ContractError(f"expected (B, T, 1, H, W) clip, got {tuple(clip.shape)}")
        if clip.shape[1] == 0:
            raise ContractError("clip must contain at least one frame")
        B, T = clip.shape[0], clip.shape[1]
        s = self.config.grid_size
        state = self.convlstm.init_state(B, s, s, clip.device, clip.dtype)

        seg_all, side_all, logit_all = [], None, []
        for t in range(T):
            skips, bottom = self.encode(clip[:, t])
            h_t, state = self.convlstm(bottom, state)
            if self.flags.classification_branch:
                logit_all.append(self.classify(h_t))
            feats = self.decode(h_t, skips)
            seg_prob, side_probs = self.segment(feats)
            seg_all.append(seg_prob)
            if side_all is None:
                side_all = [[] for _ in side_probs]
            for lvl, sp in enumerate(side_probs):
                side_all[lvl].append(sp)

        seg = torch.stack(seg_all, dim=1)
        sides = [torch.stack(lvl, dim=1) for lvl in side_all]
        logits = torch.stack(logit_all, dim=1) if self.flags.classification_branch else None
        return seg, logits, sides

    @torch.no_grad()
    def forward_clip(self, frames) -> List[FramePrediction]:
        """Inference over one clip of (T, H, W) or (T, 1, H, W) frames.

        Runs in eval mode (running-stat normalization, no dropout) and
        returns detached numpy predictions, one per frame.
        """
        arr = np.asarray(frames, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[:, None]
        if arr.ndim != 4 or arr.shape[1] != 1:
            raise ContractError(f"expected (T, H, W) or (T, 1, H, W) frames, got {arr.shape}")
        if arr.shape[0] == 0:
            raise ContractError("clip must contain at least one frame")
        was_training = self.training
        self.eval()
        try:
            clip = torch.from_numpy(arr).unsqueeze(0)
            seg, logits, sides = self.forward(clip)
        finally:
            self.train(was_training)
        preds = []
        for t in range(arr.shape[0]):
            preds.append(
                FramePrediction(
                    seg_prob=seg[0, t, 0].numpy(),
                    class_logits=logits[0, t].numpy() if logits is not None else None,
                    side_probs=[s[0, t, 0].numpy() for s in sides],
                )
            )
        return preds


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())

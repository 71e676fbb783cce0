"""Exports small segmentation networks with torch and records reference outputs.

Usage: make_parity_models.py OUT_DIR

Writes, per model: <name>.onnx, <name>.json (metadata sidecar), <name>.input.bin,
<name>.output.bin (little-endian float32) and <name>.case.json (shapes plus the
graph input dims as reported by the onnx package). Exits 77 when torch or onnx
is unavailable so the calling test can be skipped.
"""

import json
import os
import sys
import warnings

try:
    import numpy as np
    import onnx
    import torch
    import torch.nn as nn
    import torch.nn.functional as F
except ImportError as exc:  # pragma: no cover
    print(f"skipping: {exc}")
    sys.exit(77)

warnings.filterwarnings("ignore")
torch.manual_seed(0)


def block(cin, cout, conv=nn.Conv2d, bn=nn.BatchNorm2d):
    return nn.Sequential(conv(cin, cout, 3, padding=1, bias=False), bn(cout), nn.ReLU(inplace=True))


class UNet2d(nn.Module):
    """Two-level encoder-decoder with the layer types used by common exports."""

    def __init__(self, classes=2):
        super().__init__()
        self.enc1 = block(3, 8)
        self.enc2 = block(8, 16)
        self.bottom = nn.Sequential(block(16, 16), nn.Conv2d(16, 16, 3, padding=2, dilation=2), nn.LeakyReLU(0.1))
        self.up2 = nn.ConvTranspose2d(16, 16, 2, stride=2)
        self.dec2 = block(32, 8)
        self.dec1 = block(16, 8)
        self.head = nn.Conv2d(8, classes, 1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool2d(e1, 2))
        b = self.bottom(F.avg_pool2d(e2, 2))
        d2 = self.dec2(torch.cat([self.up2(b), e2], 1))
        d1 = F.interpolate(d2, scale_factor=2, mode="bilinear", align_corners=False)
        d1 = self.dec1(torch.cat([d1, e1], 1))
        return self.head(torch.sigmoid(d1) * d1)


class Shallow2d(nn.Module):
    """Single pooling level, so it runs on the full 224 x 162 window."""

    def __init__(self):
        super().__init__()
        self.enc = block(3, 8)
        self.mid = block(8, 8)
        self.head = nn.Conv2d(16, 2, 1)

    def forward(self, x):
        e = self.enc(x)
        m = F.interpolate(self.mid(F.max_pool2d(e, 2)), scale_factor=2, mode="nearest")
        return self.head(torch.cat([e, m], 1))


class Net3d(nn.Module):
    def __init__(self):
        super().__init__()
        self.enc = block(3, 4, nn.Conv3d, nn.BatchNorm3d)
        self.mid = block(4, 4, nn.Conv3d, nn.BatchNorm3d)
        self.head = nn.Conv3d(8, 1, 1)

    def forward(self, x):
        e = self.enc(x)
        m = F.interpolate(self.mid(F.max_pool3d(e, 2)), scale_factor=2, mode="trilinear", align_corners=False)
        return self.head(torch.cat([e, m], 1))


def randomize_bn(model):
    # non-trivial running statistics so BatchNormalization is actually exercised
    for mod in model.modules():
        if isinstance(mod, (nn.BatchNorm2d, nn.BatchNorm3d)):
            with torch.no_grad():
                mod.running_mean.uniform_(-0.5, 0.5)
                mod.running_var.uniform_(0.5, 2.0)
                mod.weight.uniform_(0.5, 1.5)
                mod.bias.uniform_(-0.2, 0.2)


def export(out_dir, name, model, shape, sidecar, fold=True):
    model.eval()
    randomize_bn(model)
    x = torch.randn(*shape)
    with torch.no_grad():
        y = model(x)
    path = os.path.join(out_dir, name + ".onnx")
    torch.onnx.export(model, x, path, input_names=["image"], output_names=["logits"],
                      dynamic_axes={"image": {0: "batch"}, "logits": {0: "batch"}},
                      opset_version=17, do_constant_folding=fold, dynamo=False)
    graph = onnx.load(path).graph
    dims = [d.dim_value if d.HasField("dim_value") else -1 for d in graph.input[0].type.tensor_type.shape.dim]
    x.numpy().astype("<f4").tofile(os.path.join(out_dir, name + ".input.bin"))
    y.numpy().astype("<f4").tofile(os.path.join(out_dir, name + ".output.bin"))
    with open(os.path.join(out_dir, name + ".json"), "w") as f:
        json.dump(sidecar, f, indent=2)
    with open(os.path.join(out_dir, name + ".case.json"), "w") as f:
        json.dump({"input_shape": list(x.shape), "output_shape": list(y.shape), "graph_input_dims": dims,
                   "ops": sorted({n.op_type for n in graph.node})}, f, indent=2)


def main():
    out_dir = sys.argv[1]
    os.makedirs(out_dir, exist_ok=True)
    meta = {"channel_order": ["water", "fat", "in_phase"], "slice_axis": 2}
    # unfolded export keeps BatchNormalization nodes in the graph
    export(out_dir, "unet2d", UNet2d(), (3, 3, 32, 24), dict(meta, decision="argmax", model_id="parity-unet2d"),
           fold=False)
    export(out_dir, "shallow2d", Shallow2d(), (2, 3, 224, 162), dict(meta, decision="argmax"))
    export(out_dir, "net3d", Net3d(), (1, 3, 8, 12, 10), dict(meta, decision="sigmoid:0.5"))
    print("wrote parity fixtures to", out_dir)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Write torchvision ResNet-34 weights into a featimg weights cache.

The output is a BackboneWeights checkpoint (docs/formats.md) named
resnet34_imagenet.ckpt. The classification layer is dropped.

    python3 tools/export_resnet34_weights.py --cache ~/.cache/featimg
    python3 tools/export_resnet34_weights.py --cache DIR --random --seed 0
"""

import argparse
import json
import os
import struct
import sys
import tempfile
import zlib

import torch

MAGIC = b"FIMGCKPT"
VERSION = 1
KIND_BACKBONE_WEIGHTS = 4
FILE_NAME = "resnet34_imagenet.ckpt"
DTYPE_TAGS = {torch.float32: 0, torch.float64: 1, torch.int64: 2}


def serialize(state, config):
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, KIND_BACKBONE_WEIGHTS)
    cfg = json.dumps(config, separators=(",", ":"), sort_keys=True).encode()
    out += struct.pack("<I", len(cfg)) + cfg
    out += struct.pack("<I", len(state))
    for name, tensor in state.items():
        t = tensor.detach().cpu().contiguous()
        if t.dtype not in DTYPE_TAGS:
            t = t.float()
        key = name.encode()
        out += struct.pack("<I", len(key)) + key
        out += struct.pack("<BI", DTYPE_TAGS[t.dtype], t.dim())
        out += b"".join(struct.pack("<q", d) for d in t.shape)
        out += t.numpy().astype(t.numpy().dtype.newbyteorder("<"), copy=False).tobytes()
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


def load_model(args):
    import torchvision

    if args.state_dict:
        model = torchvision.models.resnet34(weights=None)
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    elif args.random:
        torch.manual_seed(args.seed)
        model = torchvision.models.resnet34(weights=None)
    else:
        model = torchvision.models.resnet34(weights=torchvision.models.ResNet34_Weights.IMAGENET1K_V1)
    return model


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--cache", required=True, help="weights cache directory")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--random", action="store_true", help="random initialization instead of ImageNet weights")
    source.add_argument("--state-dict", help="torchvision resnet34 state_dict saved with torch.save")
    parser.add_argument("--seed", type=int, default=0, help="seed for --random")
    args = parser.parse_args()

    state = {k: v for k, v in load_model(args).state_dict().items() if not k.startswith("fc.")}
    data = serialize(state, {"arch": "resnet34", "input_channels": 3})

    os.makedirs(args.cache, exist_ok=True)
    target = os.path.join(args.cache, FILE_NAME)
    fd, tmp = tempfile.mkstemp(dir=args.cache, prefix=".tmp_")
    with os.fdopen(fd, "wb") as f:
        f.write(data)
    os.replace(tmp, target)
    print(f"wrote {len(state)} tensors to {target} crc32 {zlib.crc32(data[:-4]) & 0xFFFFFFFF:08x}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

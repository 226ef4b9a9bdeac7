#!/usr/bin/env python3
"""Convert torchvision VGG19 feature weights into the tensor archive format.

The result can be used as the perceptual/style feature extractor, either by
passing its path as `extractor.source` or by placing it in $AOT_CACHE_DIR as
vgg19_features.aott.

    python tools/convert_vgg19.py --out vgg19_features.aott
    python tools/convert_vgg19.py --state-dict vgg19.pth --out vgg19_features.aott
"""

import argparse
import json
import struct
import sys

import numpy as np

MAGIC = b"AOTARCH1"
FLOAT32 = 1
# Convolution indices inside torchvision's vgg19().features.
CONV_INDICES = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34]


def load_state_dict(path):
    import torch

    if path:
        state = torch.load(path, map_location="cpu", weights_only=True)
    else:
        from torchvision.models import VGG19_Weights, vgg19

        state = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).state_dict()
    # Accept either a full model state dict or the features submodule alone.
    out = {}
    for key, value in state.items():
        name = key if key.startswith("features.") else "features." + key
        out[name] = value.detach().cpu().numpy()
    return out


def write_archive(path, tensors, metadata):
    meta = json.dumps(metadata, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(tensors)))
        for name, array in tensors:
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<BB", FLOAT32, array.ndim))
            f.write(struct.pack("<%dQ" % array.ndim, *array.shape))
            f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--state-dict", help="local .pth file; downloads torchvision weights if omitted")
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    state = load_state_dict(args.state_dict)
    tensors = []
    for idx in CONV_INDICES:
        for part in ("weight", "bias"):
            name = "features.%d.%s" % (idx, part)
            if name not in state:
                sys.exit("missing tensor %s in state dict" % name)
            tensors.append((name, state[name]))
    write_archive(args.out, tensors, {"format": "aot-extractor", "topology": "vgg19", "source": "torchvision"})
    print("wrote %d tensors to %s" % (len(tensors), args.out))


if __name__ == "__main__":
    main()

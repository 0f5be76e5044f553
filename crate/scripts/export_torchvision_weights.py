"""Convert torchvision ImageNet backbones into the safetensors files lesiontl loads.

Writes <out>/vgg16.safetensors, <out>/vgg19.safetensors and <out>/alexnet.safetensors
with tensors named conv{block}_{i}.weight/.bias (VGG) or conv{i}.weight/.bias (AlexNet).

    python scripts/export_torchvision_weights.py --out ~/.cache/lesiontl
"""

import argparse
from pathlib import Path

import torch
import torchvision
from safetensors.torch import save_file

BUILDERS = {
    "vgg16": (torchvision.models.vgg16, "VGG16_Weights"),
    "vgg19": (torchvision.models.vgg19, "VGG19_Weights"),
    "alexnet": (torchvision.models.alexnet, "AlexNet_Weights"),
}


def conv_names(name, features):
    names, block, index, count = [], 1, 0, 0
    for module in features:
        if isinstance(module, torch.nn.Conv2d):
            count += 1
            index += 1
            names.append((module, f"conv{count}" if name == "alexnet" else f"conv{block}_{index}"))
        elif isinstance(module, torch.nn.MaxPool2d):
            block += 1
            index = 0
    return names


def export(name, out, random_init):
    build, weights_enum = BUILDERS[name]
    weights = None if random_init else getattr(torchvision.models, weights_enum).DEFAULT
    model = build(weights=weights).eval()
    tensors = {}
    for module, layer in conv_names(name, model.features):
        tensors[f"{layer}.weight"] = module.weight.detach().float().contiguous()
        tensors[f"{layer}.bias"] = module.bias.detach().float().contiguous()
    path = out / f"{name}.safetensors"
    save_file(tensors, str(path))
    print(f"{path}: {len(tensors) // 2} conv layers")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--models", nargs="+", default=list(BUILDERS), choices=list(BUILDERS))
    parser.add_argument("--random-init", action="store_true", help="skip the download; for testing the format")
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.models:
        export(name, args.out, args.random_init)


if __name__ == "__main__":
    main()

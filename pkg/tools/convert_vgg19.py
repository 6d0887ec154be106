"""Convert VGG-19 weights to a styleforge weight archive.

    python tools/convert_vgg19.py vgg19-dcbb9e9d.pth weights/vgg19
    python tools/convert_vgg19.py --standin weights/vgg19_standin

The first form reads a torchvision ``vgg19`` state dict (the file published
by torchvision, or ``torch.save(vgg19().features.state_dict())``). The
second writes the seeded random stand-in used when no pretrained file is
available.
"""

import argparse

import torch

from styleforge.codec import from_torchvision_state_dict, load_weights, standin_weights, write_archive


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source", nargs="?", help="torchvision VGG-19 .pth file")
    ap.add_argument("dest", help="output archive prefix")
    ap.add_argument("--standin", action="store_true", help="write seeded stand-in weights instead")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.standin:
        tensors = standin_weights(args.seed).tensors
    else:
        if args.source is None:
            ap.error("source is required unless --standin is given")
        state = torch.load(args.source, map_location="cpu", weights_only=True)
        tensors = from_torchvision_state_dict(state)
    write_archive(args.dest, tensors)
    archive = load_weights(args.dest)
    print(f"wrote {args.dest}: {len(archive)} tensors")


if __name__ == "__main__":
    main()

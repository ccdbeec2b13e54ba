"""Command-line mirror of capture().

The model comes from a TorchScript/pickle file or a builder function
(``module:function`` returning an nn.Module); images from a .pt or .npy
tensor file. The hooked layer id is always explicit: where to sample is a
property of the protected model's architecture, not something to guess.
"""

from __future__ import annotations

import argparse
import importlib
import json
import sys

import numpy as np
import torch

from .capture import capture


def _load_model(args) -> torch.nn.Module:
    if args.builder:
        mod_name, _, fn_name = args.builder.partition(":")
        if not fn_name:
            raise ValueError("--builder must look like package.module:function")
        fn = getattr(importlib.import_module(mod_name), fn_name)
        return fn()
    try:
        return torch.jit.load(args.model, map_location="cpu")
    except RuntimeError:
        obj = torch.load(args.model, map_location="cpu", weights_only=False)
        if not isinstance(obj, torch.nn.Module):
            raise ValueError(f"{args.model} does not contain a torch module")
        return obj


def _load_images(path: str) -> torch.Tensor:
    if path.endswith(".npy"):
        return torch.from_numpy(np.load(path)).float()
    obj = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(obj, torch.Tensor):
        raise ValueError(f"{path} does not contain an image tensor")
    return obj.float()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afvhook", description=__doc__)
    parser.add_argument("--model", help="TorchScript or pickled nn.Module file")
    parser.add_argument("--builder", help="module:function returning the model")
    parser.add_argument("--layer", required=True, help="submodule id to hook (pre-layer input)")
    parser.add_argument("--images", required=True, help=".pt or .npy image batch")
    parser.add_argument("--out", required=True, help="output dump path")
    parser.add_argument("--attack", default="clean", help="clean or a toolbox attack id")
    parser.add_argument("--attack-label", type=int, default=0)
    parser.add_argument("--attack-params", default="{}", help="JSON kwargs for the attack")
    parser.add_argument("--weakened", action="store_true",
                        help="halve strength parameters (strain dataset profile)")
    parser.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if bool(args.model) == bool(args.builder):
            raise ValueError("give exactly one of --model or --builder")
        model = _load_model(args)
        images = _load_images(args.images)
        result = capture(
            model,
            args.layer,
            images,
            args.out,
            attack=args.attack,
            attack_label=args.attack_label,
            attack_params=json.loads(args.attack_params),
            weakened=args.weakened,
            batch_size=args.batch_size,
        )
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(
        f"captured {result.n_samples} samples of shape {result.shape} "
        f"({result.n_failed} failed attacks) -> {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())

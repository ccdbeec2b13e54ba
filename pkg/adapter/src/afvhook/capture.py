"""Forward-hook capture of latent activations into AFV latent dumps.

Registers a pre-hook on a named submodule of a pretrained torch model so
the tensor ARRIVING at that layer (e.g. the input of the final batch
normalization stage) is recorded for every image, flattened, and written
in the dump format. Attacks are never implemented here: pass any
callable ``(model, images) -> adversarial images``, or use the optional
adapters over an installed attack toolbox. A sample whose attack did not
flip the model's prediction is kept with attack_success=False.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
import torch

from .dumpfmt import write_dump

# attack constructor kwargs treated as strength knobs by the weakened profile
STRENGTH_PARAM_NAMES = ("eps", "eps_step", "epsilon", "max_eps", "confidence", "overshoot")


class LayerNotFoundError(ValueError):
    pass


class AttackUnavailableError(ValueError):
    pass


@dataclass
class CaptureResult:
    n_samples: int
    shape: tuple[int, int, int]
    bytes_written: int
    n_failed: int  # attack rows whose prediction did not flip


def weaken_params(params: dict, factor: float = 0.5) -> dict:
    """Halve (by default) every known strength parameter, for strain datasets."""
    out = dict(params)
    for key in out:
        if key in STRENGTH_PARAM_NAMES and isinstance(out[key], (int, float)):
            out[key] = out[key] * factor
    return out


def resolve_attack(attack, params: dict | None = None, weakened: bool = False):
    """Map an attack id to a callable ``(model, images) -> adv_images``.

    ``None`` or "clean" means no attack. Callables pass through unchanged
    (the caller owns their parameters). String ids are adapted onto an
    installed attack toolbox; without one, only "clean" is available.
    """
    if attack is None or attack == "clean":
        return None
    if callable(attack):
        return attack
    params = dict(params or {})
    if weakened:
        params = weaken_params(params)
    return _toolbox_attack(str(attack), params)


def _toolbox_attack(name: str, params: dict):
    try:
        from art.attacks import evasion as ev
        from art.estimators.classification import PyTorchClassifier
    except ImportError as e:
        raise AttackUnavailableError(
            f"attack id {name!r} needs an installed attack toolbox "
            "(adversarial-robustness-toolbox); pass a callable instead"
        ) from e
    registry = {
        "fgm": ev.FastGradientMethod,
        "pgd": ev.ProjectedGradientDescent,
        "bim": ev.BasicIterativeMethod,
        "deepfool": ev.DeepFool,
        "cw_l2": ev.CarliniL2Method,
    }
    if name not in registry:
        raise AttackUnavailableError(f"unknown attack id {name!r}; known: {sorted(registry)}")

    def run(model: torch.nn.Module, images: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            n_classes = model(images[:1]).shape[1]
        wrapped = PyTorchClassifier(
            model=model,
            loss=torch.nn.CrossEntropyLoss(),
            input_shape=tuple(images.shape[1:]),
            nb_classes=n_classes,
            clip_values=(float(images.min()), float(images.max())),
        )
        adv = registry[name](wrapped, **params).generate(images.numpy())
        return torch.from_numpy(adv)

    return run


def _get_layer(model: torch.nn.Module, layer_id: str) -> torch.nn.Module:
    try:
        return model.get_submodule(layer_id)
    except AttributeError as e:
        raise LayerNotFoundError(f"layer not found: {layer_id!r}") from e


def capture(
    model: torch.nn.Module,
    layer_id: str,
    images: torch.Tensor | Iterable[torch.Tensor],
    out_path: str,
    attack: str | Callable | None = "clean",
    attack_label: int = 0,
    class_names: dict[int, str] | None = None,
    attack_params: dict | None = None,
    weakened: bool = False,
    batch_size: int = 32,
) -> CaptureResult:
    """Capture the flattened pre-layer tensors of every image into a dump.

    The manifest records ``attack_label`` for every row (0 for clean) and
    attack_success = (prediction on the perturbed image differs from the
    prediction on the clean image). Clean captures record success=True.
    """
    if attack_label < 0 or (attack_label == 0) != (attack in (None, "clean")):
        raise ValueError("attack_label must be 0 for clean captures and positive for attacks")
    layer = _get_layer(model, layer_id)
    attack_fn = resolve_attack(attack, attack_params, weakened)
    if isinstance(images, torch.Tensor):
        batches = [images[i : i + batch_size] for i in range(0, images.shape[0], batch_size)]
    else:
        batches = list(images)

    grabbed: list[torch.Tensor] = []

    def hook(_module, inputs):
        grabbed.append(inputs[0].detach().to("cpu", torch.float32))

    model.eval()
    rows: list[np.ndarray] = []
    success: list[bool] = []
    shape: tuple[int, int, int] | None = None
    handle = layer.register_forward_pre_hook(hook)
    try:
        for batch in batches:
            with torch.no_grad():
                grabbed.clear()
                clean_logits = model(batch)
                clean_pred = clean_logits.argmax(dim=1)
                clean_latent = grabbed[-1]
            if attack_fn is None:
                latent = clean_latent
                flipped = torch.ones(batch.shape[0], dtype=torch.bool)
            else:
                adv = attack_fn(model, batch)
                with torch.no_grad():
                    grabbed.clear()
                    adv_pred = model(adv).argmax(dim=1)
                    latent = grabbed[-1]
                flipped = adv_pred != clean_pred
            dims = tuple(latent.shape[1:])
            if not 1 <= len(dims) <= 3:
                raise ValueError(f"hooked layer must carry 1-3 dims per sample, got {dims}")
            per_sample = dims + (1,) * (3 - len(dims))
            if shape is None:
                shape = per_sample
            elif shape != per_sample:
                raise ValueError(f"hooked layer shape changed: {shape} vs {per_sample}")
            rows.append(latent.reshape(latent.shape[0], -1).numpy())
            success.extend(bool(v) for v in flipped)
    finally:
        handle.remove()
    if not rows:
        raise ValueError("empty capture")
    values = np.vstack(rows)
    n = values.shape[0]
    labels = np.full(n, attack_label, dtype=np.int64)
    names = {0: "clean"}
    if class_names:
        names.update(class_names)
    if attack_label != 0:
        names.setdefault(attack_label, str(attack) if not callable(attack) else "attack")
    flags = np.ones(n, dtype=bool) if attack_fn is None else np.asarray(success, dtype=bool)
    nbytes = write_dump(values, shape, labels, flags, names, out_path)
    return CaptureResult(n, shape, nbytes, int(np.sum(~flags)) if attack_fn else 0)

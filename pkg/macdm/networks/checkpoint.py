from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import torch
from pydantic import ValidationError
from torch import nn

from macdm.core.exceptions import CheckpointError, CheckpointMismatchError
from macdm.core.files import atomic_write_bytes
from macdm.core.hashing import sha256_file
from macdm.schemas.checkpoint import CheckpointKind, CheckpointMeta

from .classifier import NoisyInputClassifier
from .denoiser import MaskConditionedUNet

logger = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    """A saved parameter blob, its sidecar metadata and content hash."""

    path: Path
    meta: CheckpointMeta
    sha256: str

    @property
    def sidecar(self) -> Path:
        return sidecar_path(self.path)


def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def save_checkpoint(model: nn.Module, meta: CheckpointMeta, path: Path) -> Checkpoint:
    path = Path(path)
    atomic_write_bytes(path, lambda fh: torch.save(model.state_dict(), fh))
    sidecar = sidecar_path(path)
    atomic_write_bytes(sidecar, lambda fh: fh.write(meta.model_dump_json(indent=2).encode("utf-8")))
    digest = sha256_file(path)
    logger.info("saved %s checkpoint %s (%s)", meta.kind.value, path, digest[:12])
    return Checkpoint(path=path, meta=meta, sha256=digest)


def load_state(
    path: Path, map_location: str | torch.device = "cpu"
) -> Tuple[Dict[str, torch.Tensor], CheckpointMeta]:
    path = Path(path)
    sidecar = sidecar_path(path)
    if not path.exists() or not sidecar.exists():
        raise CheckpointError(f"checkpoint {path} or its sidecar {sidecar.name} is missing")
    try:
        meta = CheckpointMeta.model_validate_json(sidecar.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise CheckpointError(f"malformed checkpoint sidecar {sidecar}: {exc}") from exc
    state = torch.load(path, map_location=map_location, weights_only=True)
    return state, meta


def _build(meta: CheckpointMeta) -> nn.Module:
    timesteps = meta.schedule.timesteps if meta.schedule is not None else None
    if meta.kind == CheckpointKind.DENOISER:
        return MaskConditionedUNet(meta.network_config(), timesteps=timesteps)
    if meta.kind == CheckpointKind.GUIDANCE_CLASSIFIER:
        return NoisyInputClassifier(meta.network_config(), timesteps=timesteps)
    raise CheckpointError(f"no diffusion network for checkpoint kind {meta.kind.value}")


def load_network(
    path: Path,
    expected: Optional[CheckpointKind] = None,
    map_location: str | torch.device = "cpu",
) -> Tuple[nn.Module, CheckpointMeta]:
    """Rebuild a denoiser or guidance classifier in eval mode."""
    state, meta = load_state(path, map_location)
    if expected is not None and meta.kind != expected:
        raise CheckpointError(f"{path} holds a {meta.kind.value}, expected {expected.value}")
    model = _build(meta)
    model.load_state_dict(state)
    model.to(map_location)
    model.eval()
    return model, meta


def check_compatible(denoiser: CheckpointMeta, classifier: CheckpointMeta) -> None:
    """Guidance only makes sense when both networks saw the same noisy inputs."""
    problems = []
    if denoiser.schedule != classifier.schedule:
        problems.append(f"schedule {denoiser.schedule} vs {classifier.schedule}")
    if denoiser.weights != classifier.weights:
        problems.append(f"channel weights {denoiser.weights} vs {classifier.weights}")
    d_size = denoiser.network.get("image_size")
    c_size = classifier.network.get("image_size")
    if d_size != c_size:
        problems.append(f"resolution {d_size} vs {c_size}")
    if problems:
        raise CheckpointMismatchError("denoiser/classifier mismatch: " + "; ".join(problems))


def state_digest(model: Union[nn.Module, Mapping[str, torch.Tensor]]) -> str:
    """
    sha256 over parameter names, shapes and bytes in key order.

    Stable across torch.save calls, whose archives embed a per-save serialization id.
    """
    digest = hashlib.sha256()
    state = model.state_dict() if isinstance(model, nn.Module) else model
    for name, tensor in sorted(state.items()):
        data = tensor.detach().cpu().contiguous()
        digest.update(name.encode("utf-8"))
        digest.update(str(tuple(data.shape)).encode("utf-8"))
        digest.update(data.numpy().tobytes())
    return digest.hexdigest()


def checkpoint_digest(path: Path) -> str:
    state, _ = load_state(path)
    return state_digest(state)

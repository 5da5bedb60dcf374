"""Optional pretrained-CNN mode: penultimate-layer activations via torchvision.

Best-effort: requires torch/torchvision and downloadable weights. The
builtin-equiv mode has no such dependencies.
"""

from __future__ import annotations

import numpy as np


class CnnExtractor:
    def __init__(self, model_name: str = "resnet18"):
        import torch
        import torchvision.models as models

        self._torch = torch
        factory = getattr(models, model_name, None)
        if factory is None:
            raise ValueError(f"unknown torchvision model {model_name!r}")
        model = factory(weights="DEFAULT")
        # strip the classification head; keep the pooled penultimate output
        self._backbone = torch.nn.Sequential(*list(model.children())[:-1]).eval()
        with torch.no_grad():
            probe = self._backbone(torch.zeros(1, 3, 224, 224))
        self.dim = int(probe.reshape(1, -1).shape[1])
        self._mean = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
        self._std = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)

    def __call__(self, img: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1)
            x = torch.nn.functional.interpolate(
                x[None], size=(224, 224), mode="bilinear", align_corners=False
            )[0]
            x = (x - self._mean) / self._std
            out = self._backbone(x[None]).reshape(-1)
        return out.numpy().astype(np.float32)

"""Tiny convolutional classifier trained on the synthetic class labels, used
as a learned feature extractor for DISTS/FID/KID. Pretrained perceptual
backbones (Inception, VGG, CLIP) deliberately have no role here; this class
fills the same extractor slot they would."""

from __future__ import annotations

import os

import numpy as np
import torch
from torch import nn

from . import flatshop
from .codec import image_to_tensor
from .errors import ContractError


class TinyConvClassifier(nn.Module):
    def __init__(self, n_classes: int = 3, width: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(3, width, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(width, width * 2, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(width * 2, width * 4, 3, stride=2, padding=1)
        self.head = nn.Linear(width * 4, n_classes)
        self.act = nn.SiLU()

    def stages_forward(self, x: torch.Tensor):
        h1 = self.act(self.conv1(x))
        h2 = self.act(self.conv2(h1))
        h3 = self.act(self.conv3(h2))
        return [h1, h2, h3]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h3 = self.stages_forward(x)[-1]
        return self.head(h3.mean(dim=(2, 3)))


class ClassifierExtractor:
    """Adapts a TinyConvClassifier to the metric extractor protocol."""

    def __init__(self, net: TinyConvClassifier):
        self.net = net.eval()

    def _prep(self, image: np.ndarray) -> torch.Tensor:
        if image.ndim != 3 or image.shape[-1] != 3:
            raise ContractError("classifier extractor expects an RGB image")
        return image_to_tensor(image).unsqueeze(0)

    def stages(self, image: np.ndarray):
        with torch.no_grad():
            stages = self.net.stages_forward(self._prep(image))
        return [s[0].numpy().astype(np.float64) for s in stages]

    def embed(self, image: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            h3 = self.net.stages_forward(self._prep(image))[-1]
        return h3[0].mean(dim=(1, 2)).numpy().astype(np.float64)


def train_classifier(manifest: flatshop.DatasetManifest, epochs: int = 5,
                     seed: int = 0, lr: float = 1e-3,
                     batch_size: int = 32) -> TinyConvClassifier:
    """Fit the class labels from the garment images."""
    torch.manual_seed(seed)
    net = TinyConvClassifier()
    images, labels = [], []
    for e in manifest.entries:
        img = flatshop.load_png(os.path.join(manifest.root_path, e.garment_file))
        images.append(image_to_tensor(img))
        labels.append(flatshop.CLASS_IDS[e.class_name] - 1)
    data = torch.stack(images)
    target = torch.tensor(labels)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC1A5]))
    for _ in range(epochs):
        perm = torch.from_numpy(rng.permutation(len(images)))
        for i in range(0, len(images), batch_size):
            idx = perm[i:i + batch_size]
            logits = net(data[idx])
            loss = nn.functional.cross_entropy(logits, target[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net

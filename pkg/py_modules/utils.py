import random

import numpy as np
import torch
from PIL import Image


def seed_everything(seed: int) -> torch.Generator:
    """Seed python, numpy and torch; returns a torch.Generator on the same seed."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def save_png(path: str, image) -> None:
    """Write a 3×H×W (or H×W×3) image in [0,1] as 8-bit RGB PNG."""
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 3 and arr.shape[-1] != 3:
        arr = arr.transpose(1, 2, 0)
    arr = np.clip(np.rint(np.clip(arr, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_png(path: str) -> torch.Tensor:
    """Read an 8-bit RGB PNG as a 3×H×W float32 tensor in [0,1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def cycle(loader):
    """Endless iteration over a DataLoader, reshuffling every pass."""
    while True:
        for batch in loader:
            yield batch

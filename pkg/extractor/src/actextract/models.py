"""Model adapters.

A feature model is any object with:

    name: str                   recorded as the labfile source
    layer: str                  recorded in the actfile header
    class_names: Sequence[str]  labels mode only
    activations(images) -> (N, dim) float array for the configured layer,
                           flattened channel-major then row then column
    class_scores(images) -> (N, n_classes) float array (logits; top-K is
                            the same pre- or post-softmax)

The torchvision adapter below wraps VGG16. Tests use small stub models, so
torch is only imported when the adapter is actually constructed.
"""

import logging

import numpy as np

logger = logging.getLogger(__name__)

# final module index of each pooled convolutional block in torchvision vgg16
VGG16_BLOCK_POOLS = {
    "block1_pool": 4,
    "block2_pool": 9,
    "block3_pool": 16,
    "block4_pool": 23,
    "block5_pool": 30,
}


class Vgg16Model:
    """VGG16 pretrained on ImageNet, CPU inference only.

    ``layer`` is one of the ``block*_pool`` aliases or ``features.<i>`` for a
    raw submodule index. Weights come from the torchvision cache/download, or
    from a local state-dict file via ``weights_path`` (offline use).
    """

    name = "vgg16-imagenet"

    def __init__(self, layer: str = "block5_pool", weights_path: str | None = None,
                 class_names=None):
        import torch
        import torchvision

        self._torch = torch
        if weights_path:
            net = torchvision.models.vgg16()
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
            self.class_names = list(class_names) if class_names else None
        else:
            weights = torchvision.models.VGG16_Weights.IMAGENET1K_V1
            net = torchvision.models.vgg16(weights=weights)
            self.class_names = (list(class_names) if class_names
                                else list(weights.meta["categories"]))
        net.eval()
        self._net = net
        self.layer = layer
        if layer in VGG16_BLOCK_POOLS:
            cut = VGG16_BLOCK_POOLS[layer] + 1
        elif layer.startswith("features."):
            cut = int(layer.split(".", 1)[1]) + 1
        else:
            raise ValueError(
                f"unknown layer {layer!r}; use one of {sorted(VGG16_BLOCK_POOLS)} "
                f"or features.<index>")
        self._features = torch.nn.Sequential(*list(net.features.children())[:cut])
        from torchvision import transforms
        self._preprocess = transforms.Compose([
            transforms.Resize(256),
            transforms.CenterCrop(224),
            transforms.ToTensor(),
            transforms.Normalize(mean=[0.485, 0.456, 0.406],
                                 std=[0.229, 0.224, 0.225]),
        ])

    def _batch_tensor(self, images):
        return self._torch.stack([self._preprocess(img) for img in images])

    def activations(self, images) -> np.ndarray:
        with self._torch.no_grad():
            out = self._features(self._batch_tensor(images))
        # (N, C, H, W) -> (N, C*H*W), channel-major then row then column
        return out.flatten(start_dim=1).numpy().astype(np.float64)

    def class_scores(self, images) -> np.ndarray:
        if self.class_names is None:
            raise ValueError(
                "labels mode needs class names: pass --class-names with --weights")
        with self._torch.no_grad():
            logits = self._net(self._batch_tensor(images))
        return logits.numpy().astype(np.float64)

"""The full detector: encoder over image patches feeding the decoder.

Construction is deterministic for a given config: one PCG stream seeded
from (config seed, "init") drives every draw in a fixed order, so two
models built from equal configs match bit for bit.
"""

import numpy as np

from .decoder import Decoder
from .encoder import Encoder
from .rng import Rng, derive_seed


class DetectionModel:
    def __init__(self, cfg):
        cfg.validate()
        self.cfg = cfg
        rng = Rng(derive_seed(cfg.seed, "init"))
        grid = cfg.scene.image_size // cfg.scene.patch_size
        self.encoder = Encoder(
            rng,
            cfg.model_dim,
            cfg.num_heads,
            cfg.encoder_layers,
            cfg.scene.patch_size,
            grid,
            grid,
            cfg.temperature,
        )
        self.decoder = Decoder(
            rng,
            cfg.model_dim,
            cfg.num_heads,
            cfg.decoder_layers,
            cfg.num_queries,
            cfg.scene.num_classes,
            variant=cfg.attention,
            spatial_query=cfg.spatial_query,
            projection_form=cfg.projection_form,
            reference_mode=cfg.reference_mode,
            offset_regression=cfg.offset_regression,
            temperature=cfg.temperature,
        )

    def forward(self, image, record_maps=False):
        memory = self.encoder(image)
        return self.decoder(memory, record_maps=record_maps)

    def named_parameters(self):
        out = self.encoder.named_params("encoder")
        out.extend(self.decoder.named_params("decoder"))
        return out

    def parameter_groups(self, lr_transformer, lr_reference):
        """Two optimizer groups: the patch embedding plus reference-point
        parameters run at the lower rate, everything else at the main one."""
        reference_names = {
            name for name, _ in self.encoder.embed.named_params("encoder.embed")
        }
        reference_names.update(name for name, _ in self.decoder.refs.named_params("decoder.refs"))
        transformer, reference = [], []
        for name, p in self.named_parameters():
            (reference if name in reference_names else transformer).append((name, p))
        return [
            {"name": "transformer", "lr": lr_transformer, "params": transformer},
            {"name": "reference", "lr": lr_reference, "params": reference},
        ]

    def export_arrays(self):
        return {f"model.{name}": p.data.copy() for name, p in self.named_parameters()}

    def load_arrays(self, arrays):
        for name, p in self.named_parameters():
            key = f"model.{name}"
            if key not in arrays:
                raise KeyError(f"checkpoint is missing parameter {key!r}")
            value = arrays[key]
            if value.shape != p.data.shape:
                raise ValueError(
                    f"parameter {key!r} has shape {value.shape}, expected {p.data.shape}"
                )
            p.data = np.asarray(value, dtype=np.float64).copy()

from .augment import diff_augment
from .estimators import CcGAN, DCGAN, GanConfig, sample
from .hyper import rule_of_thumb_hyperparams
from .losses import (VicinalConfig, gan_discriminator_loss, generator_loss, hvdl_loss, svdl_loss,
                     vicinal_discriminator_loss, vicinity_weights)
from .nets import inject_label_generator, project_label_discriminator

__all__ = [
    "CcGAN", "DCGAN", "GanConfig", "VicinalConfig", "diff_augment", "gan_discriminator_loss", "generator_loss",
    "hvdl_loss", "inject_label_generator", "project_label_discriminator", "rule_of_thumb_hyperparams", "sample",
    "svdl_loss", "vicinal_discriminator_loss", "vicinity_weights",
]

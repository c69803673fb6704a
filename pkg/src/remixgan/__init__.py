"""ReMix augmentation for GAN image-to-image translation."""

"""Reversible dataset protection."""

from ._core import (
    DsguardError,
    Key,
    fsp_perturb,
    load_dataset,
    lsb_capacity,
    payload_bits,
    protect_dataset,
    protect_image,
    psnr,
    restore_dataset,
    restore_image,
)

__all__ = [
    "DsguardError",
    "Key",
    "fsp_perturb",
    "load_dataset",
    "lsb_capacity",
    "payload_bits",
    "protect_dataset",
    "protect_image",
    "psnr",
    "restore_dataset",
    "restore_image",
]

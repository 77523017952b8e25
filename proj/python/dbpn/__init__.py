"""Back-projection super-resolution networks (C++ core)."""

from ._core import (
    ConfigError,
    ContractError,
    Dataset,
    FormatError,
    IoError,
    Network,
    NetworkConfig,
    NumericError,
    ShapeError,
    TrainConfig,
    bicubic_baseline,
    bicubic_resize,
    checksum,
    cubic_kernel,
    evaluate,
    gradient_suite,
    load_png,
    lr_schedule,
    make_lr,
    modcrop,
    psnr,
    rgb_to_y,
    save_png,
    set_threads,
    ssim,
    synth_images,
    thread_count,
    train,
)


def build(preset, scale, seed=0):
    """He-initialized network for a named preset (SS, S, M, L, DDBPN)."""
    return Network(NetworkConfig.preset(preset, scale), seed)


__all__ = [name for name in dir() if not name.startswith("_")]

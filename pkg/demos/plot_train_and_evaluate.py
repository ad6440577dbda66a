"""
Training a small denoiser
=========================

Fit the noise estimator and residual UNet on one synthetic cube, then
produce the Noise x Index table for fixed and blind noise.

A reduced network keeps this to about a minute on one core.
"""

from msdnet import NoiseSpec, RunConfig, evaluate, psnr, synth_cube, train
from msdnet.data import add_awgn, extract_patches
from msdnet.model import denoise_cube

clean = synth_cube(seed=0, bands=2, height=64, width=64)

# Flat keys mirror the config file format used by ``msdnet train``.
config = RunConfig().replace(
    bands=2, base_channels=8, blocks_per_module=3, unet_widths=(16, 32, 64),
    patch_size=32, batch_size=4, epochs=400, learning_rate=3e-4,
    noise_mode="blind", blind_lo=10, blind_hi=70,
)
patches = extract_patches(clean, config.train.patch_size)
print(f"{len(patches)} patches; first lines of the run config:")
print("".join(config.to_text().splitlines(keepends=True)[:6]))


def progress(epoch, loss):
    if epoch % 100 == 0:
        print(f"epoch {epoch:3d} loss {loss:.4f}")


ckpt = train(patches, config, on_epoch=progress)

# Denoise one corrupted copy and look at the estimated noise level too.
noisy, truth = add_awgn(clean, NoiseSpec.fixed(50, seed=5))
denoised, sigma_hat = denoise_cube(noisy, ckpt.model, return_sigma=True)
print(f"sigma=50: PSNR {psnr(clean, noisy):.2f} -> {psnr(clean, denoised):.2f} dB; "
      f"mean estimated sigma {sigma_hat.data.mean() * 255:.1f}")

settings = [NoiseSpec.fixed(s, seed=1) for s in (30, 50, 70)] + [NoiseSpec.blind(10, 70, seed=1)]
print(evaluate(clean, ckpt.model, settings).to_text())

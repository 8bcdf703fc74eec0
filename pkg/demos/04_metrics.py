"""PSNR, SSIM and interpolation error on controlled distortions."""

import numpy as np

from tain.metrics import ie, psnr, ssim

rng = np.random.default_rng(3)
clean = rng.uniform(0, 1, (64, 64, 3))

# a uniform offset of 16/255 has a closed-form PSNR: 10*log10(255^2/256)
offset = np.clip(clean + 16.0 / 255.0, 0, 1)
off_exact = clean + 16.0 / 255.0  # unclipped, to hit the closed form exactly
print("uniform 16/255 offset: psnr %.4f dB (closed form %.4f), ie %.4f"
      % (psnr(off_exact, clean), 10 * np.log10(255 ** 2 / 256), ie(off_exact, clean)))

# identical images cap at 100 dB rather than dividing by zero
print("identical: psnr %.1f dB, ssim %.4f, ie %.4f"
      % (psnr(clean, clean), ssim(clean, clean), ie(clean, clean)))

# increasing noise degrades every metric monotonically
for sigma in (0.01, 0.05, 0.2):
    noisy = np.clip(clean + rng.normal(0, sigma, clean.shape), 0, 1)
    print("sigma %.2f: psnr %6.2f dB  ssim %.4f  ie %6.2f"
          % (sigma, psnr(noisy, clean), ssim(noisy, clean), ie(noisy, clean)))

# psnr and ie are two views of the same mean squared error
p = psnr(noisy, clean)
print("ie from psnr: %.6f vs direct %.6f" % (255 * 10 ** (-p / 20), ie(noisy, clean)))

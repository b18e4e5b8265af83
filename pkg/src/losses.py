"""
Dual-domain reconstruction objective

Every loss returns (value, gradient w.r.t. the reconstruction). Inputs are
arrays whose last two axes are (H, W); leading axes (batch, channel) are
treated as independent images.
"""

import numpy as np
from scipy.signal import fftconvolve
from scipy.signal.windows import gaussian

from .errors import ModelError
from .schemas import LossBreakdown, LossWeights

MAGNITUDE_DEAD_ZONE = 1e-12
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _check_shapes(recon: np.ndarray, target: np.ndarray) -> None:
    if recon.shape != target.shape:
        raise ModelError("shape_mismatch", f"Reconstruction {recon.shape} and target {target.shape} differ in shape")


def mse_loss(recon: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements"""
    _check_shapes(recon, target)
    diff = recon - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def orthonormal_fft2(x: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT over the last two axes"""
    return np.fft.fft2(x, axes=(-2, -1), norm="ortho")


def fft_magnitude_loss(recon: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Mean L1 distance between orthonormal FFT magnitude spectra, channel-wise

    The gradient flows through |z| as Re(conj(z) dz) / |z|; bins whose
    reconstruction magnitude is below 1e-12 contribute nothing.
    """
    _check_shapes(recon, target)
    z_recon = orthonormal_fft2(recon)
    mag_recon = np.abs(z_recon)
    diff = mag_recon - np.abs(orthonormal_fft2(target))
    value = float(np.mean(np.abs(diff)))

    live = mag_recon >= MAGNITUDE_DEAD_ZONE
    phase = np.where(live, z_recon / np.where(live, mag_recon, 1.0), 0.0)
    upstream = np.sign(diff) / diff.size * phase
    grad = np.real(np.fft.ifft2(upstream, axes=(-2, -1), norm="ortho"))
    return value, grad.astype(recon.dtype, copy=False)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian window"""
    g = gaussian(size, sigma)
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    kernel = window.reshape((1,) * (x.ndim - 2) + window.shape)
    return fftconvolve(x, kernel, mode="valid", axes=(-2, -1))


def _filter_adjoint(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    # window is symmetric, so the adjoint of valid correlation is a full convolution
    kernel = window.reshape((1,) * (x.ndim - 2) + window.shape)
    return fftconvolve(x, kernel, mode="full", axes=(-2, -1))


def ssim_index(recon: np.ndarray, target: np.ndarray) -> float:
    """Mean SSIM with an 11x11 Gaussian window, valid placement, dynamic range 1"""
    return 1.0 - ssim_loss(recon, target)[0]


def ssim_loss(recon: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """1 - mean SSIM, with its analytic gradient w.r.t. recon"""
    _check_shapes(recon, target)
    if recon.shape[-1] < SSIM_WINDOW or recon.shape[-2] < SSIM_WINDOW:
        raise ModelError("image_too_small", f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {recon.shape[-2:]}")

    window = gaussian_window()
    x = recon.astype(np.float64)
    y = target.astype(np.float64)

    mu_x = _filter_valid(x, window)
    mu_y = _filter_valid(y, window)
    e_xx = _filter_valid(x * x, window)
    e_yy = _filter_valid(y * y, window)
    e_xy = _filter_valid(x * y, window)

    var_x = e_xx - mu_x ** 2
    var_y = e_yy - mu_y ** 2
    cov = e_xy - mu_x * mu_y

    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    ssim_map = (a1 * a2) / (b1 * b2)
    value = 1.0 - float(np.mean(ssim_map))

    # partials of each window's SSIM w.r.t. the raw moments mu_x, E[x^2], E[xy]
    d_mu = (2 * mu_y * a2 - 2 * mu_y * a1) / (b1 * b2) - ssim_map * (2 * mu_x / b1 - 2 * mu_x / b2)
    d_exx = -ssim_map / b2
    d_exy = 2 * a1 / (b1 * b2)

    scale = -1.0 / ssim_map.size
    grad = scale * (
        _filter_adjoint(d_mu, window)
        + 2 * x * _filter_adjoint(d_exx, window)
        + y * _filter_adjoint(d_exy, window)
    )
    return value, grad.astype(recon.dtype, copy=False)


def total_loss(recon: np.ndarray, target: np.ndarray, weights: LossWeights) -> tuple[LossBreakdown, np.ndarray]:
    """
    Weighted sum of the enabled terms; zero-weight terms are never evaluated

    Returns:
        (breakdown with skipped terms at 0, weighted gradient)
    """
    _check_shapes(recon, target)
    breakdown = LossBreakdown()
    grad = np.zeros_like(recon)
    total = 0.0
    for name, weight, fn in (
        ("mse", weights.w_mse, mse_loss),
        ("fft", weights.w_fft, fft_magnitude_loss),
        ("ssim", weights.w_ssim, ssim_loss),
    ):
        if weight == 0:
            continue
        value, g = fn(recon, target)
        setattr(breakdown, name, value)
        total += weight * value
        grad += weight * g
    breakdown.total = total
    return breakdown, grad

"""This script contains the convolution family of primitives: convolution, its transpose,
pooling and nearest-neighbour upsampling. All layouts are [batch, channel, height, width]
"""

from typing import Optional

import numpy as np

from .tensor import Tensor, apply_op, as_tensor


def conv_output_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    """ Returns floor((extent + 2*padding - kernel) / stride) + 1 """
    return (extent + 2 * padding - kernel) // stride + 1


def transposed_output_extent(extent: int, kernel: int, stride: int, padding: int,
                             output_padding: int=0) -> int:
    """ Returns (extent - 1)*stride - 2*padding + kernel + output_padding """
    return (extent - 1) * stride - 2 * padding + kernel + output_padding


def _im2col(padded: np.ndarray, kernel_h: int, kernel_w: int, stride: int) -> np.ndarray:
    """ Gathers every kernel window of an already padded input into columns
    Arguments:
        padded: the [B, C, H, W] input, padding applied
        kernel_h: the kernel height
        kernel_w: the kernel width
        stride: the window step
    Return:
        Returns a [B, C*kh*kw, H_out*W_out] array
    """
    batch, channels, height, width = padded.shape
    out_h = (height - kernel_h) // stride + 1
    out_w = (width - kernel_w) // stride + 1
    s_b, s_c, s_h, s_w = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded,
        shape=(batch, channels, kernel_h, kernel_w, out_h, out_w),
        strides=(s_b, s_c, s_h, s_w, stride * s_h, stride * s_w),
        writeable=False)
    return windows.reshape(batch, channels * kernel_h * kernel_w, out_h * out_w)


def _col2im(cols: np.ndarray, padded_shape: tuple, kernel_h: int, kernel_w: int,
            stride: int, out_h: int, out_w: int) -> np.ndarray:
    """ Scatters columns back onto a (padded) image, adding overlapping windows
    Arguments:
        cols: the [B, C*kh*kw, out_h*out_w] columns
        padded_shape: the [B, C, H, W] shape to rebuild
        kernel_h: the kernel height
        kernel_w: the kernel width
        stride: the window step
        out_h: number of window rows
        out_w: number of window columns
    Return:
        Returns the rebuilt image
    """
    batch, channels = padded_shape[:2]
    image = np.zeros(padded_shape, dtype=cols.dtype)
    cols = cols.reshape(batch, channels, kernel_h, kernel_w, out_h, out_w)
    for k_row in range(kernel_h):
        row_end = k_row + stride * out_h
        for k_col in range(kernel_w):
            col_end = k_col + stride * out_w
            image[:, :, k_row:row_end:stride, k_col:col_end:stride] += cols[:, :, k_row, k_col]
    return image


def _pad(values: np.ndarray, padding: int, fill: float=0.0) -> np.ndarray:
    """ Pads the two spatial axes """
    if padding == 0:
        return values
    return np.pad(values, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                  constant_values=fill)


def _unpad(values: np.ndarray, padding: int) -> np.ndarray:
    """ Removes spatial padding """
    if padding == 0:
        return values
    return values[:, :, padding:-padding, padding:-padding]


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor]=None, stride: int=1,
           padding: int=0) -> Tensor:
    """ 2-D cross-correlation (no kernel flip)
    Arguments:
        x: the [B, C, H, W] input
        weight: the [O, C, kh, kw] kernel
        bias: optional [O] bias
        stride: the window step
        padding: zero padding on every spatial side
    Return:
        Returns the [B, O, H', W'] output with H' = floor((H + 2p - kh) / s) + 1
    Raises:
        ValueError: on channel mismatch, non-positive stride or a kernel larger than the
                    padded input
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ValueError(f'conv2d channel mismatch: input {x.shape}, weight {weight.shape}')
    if stride <= 0 or padding < 0:
        raise ValueError(f'conv2d needs stride > 0 and padding >= 0, got {stride}, {padding}')
    batch, _, height, width = x.shape
    out_channels, in_channels, kernel_h, kernel_w = weight.shape
    if kernel_h > height + 2 * padding or kernel_w > width + 2 * padding:
        raise ValueError(f'conv2d kernel {kernel_h}x{kernel_w} larger than padded input '
                         f'{height + 2 * padding}x{width + 2 * padding}')

    out_h = conv_output_extent(height, kernel_h, stride, padding)
    out_w = conv_output_extent(width, kernel_w, stride, padding)
    padded = _pad(x.data, padding)
    cols = _im2col(padded, kernel_h, kernel_w, stride)
    w_mat = weight.data.reshape(out_channels, in_channels * kernel_h * kernel_w)
    out = np.matmul(w_mat, cols).reshape(batch, out_channels, out_h, out_w)
    if bias is not None:
        out = out + bias.data.reshape(1, out_channels, 1, 1)

    def vjp(grad):
        grad_flat = grad.reshape(batch, out_channels, out_h * out_w)
        grad_w = np.tensordot(grad_flat, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        grad_cols = np.matmul(w_mat.T, grad_flat)
        grad_x = _unpad(_col2im(grad_cols, padded.shape, kernel_h, kernel_w, stride,
                                out_h, out_w), padding)
        grad_b = grad.sum(axis=(0, 2, 3)) if bias is not None else None
        return grad_x, grad_w, grad_b

    inputs = (x, weight, bias if bias is not None else as_tensor(0.0, like=x))
    return apply_op('conv2d', inputs, out, vjp)


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor]=None, stride: int=1,
                      padding: int=0, output_padding: int=0) -> Tensor:
    """ Transposed convolution (UpConv): the adjoint of conv2d with the same weight,
        stride and padding
    Arguments:
        x: the [B, C, H, W] input
        weight: the [C, O, kh, kw] kernel
        bias: optional [O] bias
        stride: the upsampling step
        padding: padding removed from every spatial side of the output
        output_padding: extra rows/columns added at the bottom/right (less than stride)
    Return:
        Returns the [B, O, (H-1)s - 2p + kh + op, ...] output; with kh = kw = s and no padding
        every input pixel scatters onto its own s x s block
    Raises:
        ValueError: on non-positive stride or channel mismatch
    """
    if stride <= 0:
        raise ValueError(f'transposed_conv2d needs a positive stride, got {stride}')
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ValueError(f'transposed_conv2d channel mismatch: input {x.shape}, '
                         f'weight {weight.shape}')
    if not 0 <= output_padding < stride and output_padding != 0:
        raise ValueError(f'output_padding must be smaller than stride, got {output_padding}')
    batch, in_channels, height, width = x.shape
    _, out_channels, kernel_h, kernel_w = weight.shape

    padded_shape = (batch, out_channels,
                    transposed_output_extent(height, kernel_h, stride, 0, output_padding),
                    transposed_output_extent(width, kernel_w, stride, 0, output_padding))
    w_mat = weight.data.reshape(in_channels, out_channels * kernel_h * kernel_w)
    x_flat = x.data.reshape(batch, in_channels, height * width)
    cols = np.matmul(w_mat.T, x_flat)
    out = _unpad(_col2im(cols, padded_shape, kernel_h, kernel_w, stride, height, width),
                 padding)
    if bias is not None:
        out = out + bias.data.reshape(1, out_channels, 1, 1)

    def vjp(grad):
        grad_cols = _im2col(np.ascontiguousarray(_pad(grad, padding)), kernel_h, kernel_w,
                            stride)
        # A trailing output_padding row isn't covered by any window
        grad_cols = grad_cols.reshape(batch, out_channels * kernel_h * kernel_w, -1)
        grad_cols = _crop_windows(grad_cols, grad.shape, padding, kernel_h, kernel_w, stride,
                                  height, width, out_channels)
        grad_x = np.matmul(w_mat, grad_cols).reshape(x.shape)
        grad_w = np.tensordot(x_flat, grad_cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        grad_b = grad.sum(axis=(0, 2, 3)) if bias is not None else None
        return grad_x, grad_w, grad_b

    inputs = (x, weight, bias if bias is not None else as_tensor(0.0, like=x))
    return apply_op('transposed_conv2d', inputs, out, vjp)


def _crop_windows(grad_cols: np.ndarray, grad_shape: tuple, padding: int, kernel_h: int,
                  kernel_w: int, stride: int, height: int, width: int,
                  out_channels: int) -> np.ndarray:
    """ Keeps only the first height x width windows of the gathered output gradient """
    batch = grad_shape[0]
    padded_h = grad_shape[2] + 2 * padding
    padded_w = grad_shape[3] + 2 * padding
    rows = (padded_h - kernel_h) // stride + 1
    cols = (padded_w - kernel_w) // stride + 1
    if rows == height and cols == width:
        return grad_cols
    grad_cols = grad_cols.reshape(batch, out_channels * kernel_h * kernel_w, rows, cols)
    return grad_cols[:, :, :height, :width].reshape(batch, -1, height * width)


def max_pool2d(x: Tensor, kernel: int=3, stride: int=2, padding: int=1) -> Tensor:
    """ Max pooling; the gradient goes to the first maximum of every window """
    batch, channels, height, width = x.shape
    padded = _pad(x.data, padding, fill=-np.inf)
    out_h = conv_output_extent(height, kernel, stride, padding)
    out_w = conv_output_extent(width, kernel, stride, padding)
    cols = _im2col(np.ascontiguousarray(padded), kernel, kernel, stride)
    cols = cols.reshape(batch, channels, kernel * kernel, out_h * out_w)
    arg = np.argmax(cols, axis=2)
    out = np.take_along_axis(cols, arg[:, :, None, :], axis=2)[:, :, 0, :]

    def vjp(grad):
        grad_cols = np.zeros(cols.shape, dtype=grad.dtype)
        np.put_along_axis(grad_cols, arg[:, :, None, :],
                          grad.reshape(batch, channels, 1, out_h * out_w), axis=2)
        grad_cols = grad_cols.reshape(batch, channels * kernel * kernel, out_h * out_w)
        return (_unpad(_col2im(grad_cols, padded.shape, kernel, kernel, stride, out_h, out_w),
                       padding),)

    return apply_op('max_pool2d', (x,), out.reshape(batch, channels, out_h, out_w), vjp)


def avg_pool2d(x: Tensor, factor: int=2) -> Tensor:
    """ Averages non-overlapping factor x factor blocks
    Raises:
        ValueError: if the spatial extents aren't divisible by the factor
    """
    batch, channels, height, width = x.shape
    if height % factor or width % factor:
        raise ValueError(f'avg_pool2d: extents {height}x{width} not divisible by {factor}')
    blocks = x.data.reshape(batch, channels, height // factor, factor, width // factor, factor)
    out = blocks.mean(axis=(3, 5))

    def vjp(grad):
        spread = np.repeat(np.repeat(grad, factor, axis=2), factor, axis=3)
        return (spread / (factor * factor),)

    return apply_op('avg_pool2d', (x,), out, vjp)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """ Copies every pixel onto a factor x factor block """
    batch, channels, height, width = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def vjp(grad):
        return (grad.reshape(batch, channels, height, factor, width, factor).sum(axis=(3, 5)),)

    return apply_op('upsample_nearest', (x,), out, vjp)

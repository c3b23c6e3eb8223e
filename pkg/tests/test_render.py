import numpy as np
import pytest

import somdvr
from somdvr.backend import kernels
from somdvr.errors import DegenerateCameraError, IoFailureError
from somdvr.groups import ColorVolume
from somdvr.render import (
    Camera,
    RenderedImage,
    RenderSettings,
    camera_basis,
    decode_png,
    png_bytes,
    raycast,
    write_png,
)
from somdvr.volume import VolumeMeta, make_phantom


def _uniform_color_volume(dims, rgba):
    n = dims[0] * dims[1] * dims[2]
    arr = np.tile(np.asarray(rgba, dtype=np.float32), (n, 1))
    return ColorVolume(dims=dims, rgba=arr)


def _volume_shell(dims, spacing=(1.0, 1.0, 1.0)):
    """An empty Volume carrying just geometry (dims + spacing)."""
    n = dims[0] * dims[1] * dims[2]
    return somdvr.volume.Volume(
        meta=VolumeMeta(dims=dims, spacing=spacing),
        intensities=np.zeros(n),
        raw_min=0.0,
        raw_max=1.0,
    )


def _axis_camera(dims):
    """Single-pixel camera shooting straight down +x through voxel row 0."""
    return Camera(eye=(-5.0, 0.5, 0.5), look_at=(5.0, 0.5, 0.5), up=(0.0, 0.0, 1.0),
                  vertical_fov=10.0)


def test_camera_basis_orthonormal():
    cam = Camera(eye=(1.0, 2.0, 3.0), look_at=(4.0, 6.0, 3.0), up=(0, 0, 1))
    right, up, fwd = camera_basis(cam)
    for v in (right, up, fwd):
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    assert abs(np.dot(right, up)) < 1e-12
    assert abs(np.dot(right, fwd)) < 1e-12
    assert abs(np.dot(up, fwd)) < 1e-12


def test_camera_degenerate_cases():
    with pytest.raises(DegenerateCameraError):
        camera_basis(Camera(eye=(0, 0, 0), look_at=(0, 0, 0)))
    with pytest.raises(DegenerateCameraError):
        camera_basis(Camera(eye=(0, 0, 0), look_at=(0, 0, 5), up=(0, 0, 1)))
    with pytest.raises(DegenerateCameraError):
        Camera(eye=(0, 0, 0), look_at=(1, 0, 0), vertical_fov=0.0)
    with pytest.raises(DegenerateCameraError):
        Camera(eye=(0, 0, 0), look_at=(1, 0, 0), vertical_fov=180.0)


def test_transparent_volume_renders_background():
    dims = (4, 4, 4)
    cv = _uniform_color_volume(dims, (0, 0, 0, 0))
    vol = _volume_shell(dims)
    img = raycast(cv, vol, somdvr.default_camera(vol),
                  RenderSettings(width=8, height=8, background=(0.0, 0.25, 0.5, 1.0)))
    expected = np.array([0, 64, 128, 255], dtype=np.uint8)
    assert np.array_equal(img.pixels, np.tile(expected, (8, 8, 1)))


def test_opaque_first_hit_is_exact():
    dims = (2, 2, 2)
    cv = _uniform_color_volume(dims, (1.0, 0.0, 0.0, 1.0))
    vol = _volume_shell(dims)
    img = raycast(cv, vol, _axis_camera(dims), RenderSettings(width=1, height=1, step=1.0))
    assert tuple(img.pixels[0, 0]) == (255, 0, 0, 255)


def test_two_sample_composite_hand_derived():
    """Half-opacity red then opaque blue must quantize to (128, 0, 128, 255)."""
    dims = (2, 2, 2)
    n = 8
    rgba = np.zeros((n, 4), dtype=np.float32)
    grid = rgba.reshape(2, 2, 2, 4)
    grid[:, :, 0] = [1.0, 0.0, 0.0, 0.5]  # x = 0 plane: red, alpha 1/2
    grid[:, :, 1] = [0.0, 0.0, 1.0, 1.0]  # x = 1 plane: blue, opaque
    cv = ColorVolume(dims=dims, rgba=rgba)
    vol = _volume_shell(dims)
    img = raycast(cv, vol, _axis_camera(dims), RenderSettings(width=1, height=1, step=1.0))
    assert tuple(img.pixels[0, 0]) == (128, 0, 128, 255)


def _composite_reference(alpha, seg_lens):
    """The compositing recurrence, evaluated with the production det_pow."""
    total = 0.0
    for seg in seg_lens:
        aprime = 1.0 - float(kernels.det_pow(1.0 - alpha, seg))
        total += (1.0 - total) * aprime
    return total


@pytest.mark.parametrize("alpha,step", [(0.3, 0.5), (0.3, 0.25), (0.07, 0.5),
                                        (0.6, 1.0), (0.6, 0.7)])
def test_homogeneous_slab_matches_closed_form(alpha, step):
    """Pre-quantization compositing follows A = 1 - (1-a)^L exactly; the
    rendered pixel equals the quantized closed form."""
    dims = (8, 2, 2)
    slab_len = 8.0  # index-space span of the volume along x
    n_steps = int(np.ceil(slab_len / step))
    seg_lens = [min(step, slab_len - i * step) for i in range(n_steps)]
    reference = _composite_reference(alpha, seg_lens)
    closed = 1.0 - (1.0 - alpha) ** slab_len
    assert reference == pytest.approx(closed, abs=1e-6)

    cv = _uniform_color_volume(dims, (1.0, 1.0, 1.0, alpha))
    vol = _volume_shell(dims)
    img = raycast(cv, vol, _axis_camera(dims),
                  RenderSettings(width=1, height=1, step=step,
                                 early_stop_alpha=1.0, background=(0, 0, 0, 0)))
    expected8 = int(np.floor(closed * 255.0 + 0.5))
    assert abs(int(img.pixels[0, 0, 3]) - expected8) <= 1
    assert int(img.pixels[0, 0, 3]) == int(np.floor(reference * 255.0 + 0.5))


def test_step_halving_invariant_on_homogeneous_slab():
    dims = (8, 2, 2)
    cv = _uniform_color_volume(dims, (0.2, 0.8, 0.4, 0.35))
    vol = _volume_shell(dims)
    cam = _axis_camera(dims)
    imgs = [
        raycast(cv, vol, cam, RenderSettings(width=1, height=1, step=s,
                                             early_stop_alpha=1.0))
        for s in (1.0, 0.5, 0.25)
    ]
    assert np.array_equal(imgs[0].pixels, imgs[1].pixels)
    assert np.array_equal(imgs[1].pixels, imgs[2].pixels)


def test_render_is_pure():
    rng = np.random.default_rng(3)
    dims = (7, 6, 5)
    cv = ColorVolume(dims=dims, rgba=rng.random((210, 4)).astype(np.float32))
    vol = _volume_shell(dims, spacing=(1.0, 2.0, 0.5))
    cam = somdvr.default_camera(vol)
    settings = RenderSettings(width=33, height=21, step=0.4)
    a = raycast(cv, vol, cam, settings)
    b = raycast(cv, vol, cam, settings)
    assert np.array_equal(a.pixels, b.pixels)


def test_render_anisotropic_spacing_changes_geometry():
    rng = np.random.default_rng(4)
    dims = (6, 6, 6)
    cv = ColorVolume(dims=dims, rgba=rng.random((216, 4)).astype(np.float32))
    iso = _volume_shell(dims, spacing=(1.0, 1.0, 1.0))
    aniso = _volume_shell(dims, spacing=(1.0, 1.0, 3.0))
    cam = somdvr.default_camera(iso)
    settings = RenderSettings(width=16, height=16)
    a = raycast(cv, iso, cam, settings)
    b = raycast(cv, aniso, cam, settings)
    assert not np.array_equal(a.pixels, b.pixels)


def test_early_stop_cuts_march_short():
    dims = (8, 2, 2)
    rgba = np.zeros((32, 4), dtype=np.float32)
    grid = rgba.reshape(2, 2, 8, 4)
    grid[:, :, 0] = [1.0, 0.0, 0.0, 1.0]  # opaque red wall at x=0
    grid[:, :, 4] = [0.0, 1.0, 0.0, 1.0]  # green wall behind it
    cv = ColorVolume(dims=dims, rgba=rgba)
    vol = _volume_shell(dims)
    img = raycast(cv, vol, _axis_camera(dims), RenderSettings(width=1, height=1, step=1.0))
    assert tuple(img.pixels[0, 0]) == (255, 0, 0, 255)


def test_png_round_trip_single_red_pixel(tmp_path):
    img = RenderedImage(width=1, height=1,
                        pixels=np.array([[[255, 0, 0, 255]]], dtype=np.uint8))
    path = tmp_path / "red.png"
    write_png(img, path)
    data = path.read_bytes()
    assert np.array_equal(decode_png(data), img.pixels)
    # independent decoder oracle
    PIL = pytest.importorskip("PIL.Image")
    with PIL.open(path) as im:
        assert im.size == (1, 1)
        assert im.getpixel((0, 0)) == (255, 0, 0, 255)


def test_png_encoding_deterministic():
    rng = np.random.default_rng(5)
    img = RenderedImage(width=9, height=4,
                        pixels=rng.integers(0, 256, (4, 9, 4)).astype(np.uint8))
    assert png_bytes(img) == png_bytes(img)


def test_png_checkerboard_round_trip():
    board = np.zeros((2, 2, 4), dtype=np.uint8)
    board[0, 0] = board[1, 1] = (255, 255, 255, 255)
    board[0, 1] = board[1, 0] = (0, 0, 0, 255)
    img = RenderedImage(width=2, height=2, pixels=board)
    assert np.array_equal(decode_png(png_bytes(img)), board)
    PIL = pytest.importorskip("PIL.Image")
    import io

    with PIL.open(io.BytesIO(png_bytes(img))) as im:
        assert np.array_equal(np.asarray(im), board)


def test_write_png_bad_path():
    img = RenderedImage(width=1, height=1,
                        pixels=np.zeros((1, 1, 4), dtype=np.uint8))
    with pytest.raises(IoFailureError):
        write_png(img, "/nonexistent-dir/sub/red.png")


def test_settings_validation():
    with pytest.raises(ValueError):
        RenderSettings(width=0)
    with pytest.raises(ValueError):
        RenderSettings(step=0.0)
    with pytest.raises(ValueError):
        RenderSettings(early_stop_alpha=0.0)

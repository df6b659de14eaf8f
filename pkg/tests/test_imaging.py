import hashlib
import io

import numpy as np
import pytest
from PIL import Image

from blendiff import (
    ImageFormatError,
    ProjectiveTransform,
    Raster8,
    blend,
    decode_png,
    decode_pgm,
    dilate,
    encode_png,
    encode_pgm,
    from_diffusion_domain,
    homography_from_corners,
    mask_from_raster,
    random_projective,
    raster_from_mask,
    resize,
    resize_adjoint,
    split_alpha,
    to_diffusion_domain,
    warp_adjoint,
    warp_mask,
    warp_projective,
)

from conftest import GOLDEN, box_mask

# pixel bytes of golden/sample16.png as decoded by Pillow at fixture-creation time
SAMPLE16_SHA256 = "4ee7278fbccb756725238a02a47d9f7645f4d90d3f125b7f2f338cb018237dee"


# ----- PNG codec, cross-checked against Pillow -----


def test_golden_png_decodes_to_known_pixels():
    raster = decode_png(GOLDEN.joinpath("sample16.png").read_bytes())
    assert (raster.width, raster.height, raster.channels) == (16, 16, 3)
    assert hashlib.sha256(raster.data.tobytes()).hexdigest() == SAMPLE16_SHA256
    pil = np.asarray(Image.open(GOLDEN / "sample16.png").convert("RGB"))
    assert np.array_equal(raster.data, pil)


@pytest.mark.parametrize("channels", [1, 3, 4])
def test_png_round_trip(channels):
    rng = np.random.default_rng(channels)
    px = rng.integers(0, 256, (11, 7, channels), dtype=np.uint8)
    back = decode_png(encode_png(Raster8.from_array(px)))
    assert np.array_equal(back.data, px)


@pytest.mark.parametrize("channels", [1, 3, 4])
def test_png_encode_readable_by_pillow(channels):
    rng = np.random.default_rng(10 + channels)
    px = rng.integers(0, 256, (5, 9, channels), dtype=np.uint8)
    data = encode_png(Raster8.from_array(px))
    pil = np.asarray(Image.open(io.BytesIO(data)))
    if channels == 1:
        pil = pil[:, :, None]
    assert np.array_equal(pil, px)


def test_png_decode_pillow_output():
    rng = np.random.default_rng(42)
    px = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(px, "RGB").save(buf, "PNG")
    back = decode_png(buf.getvalue())
    assert np.array_equal(back.data, px)


def test_png_bad_magic_reports_offset_zero():
    with pytest.raises(ImageFormatError) as err:
        decode_png(b"NOTAPNG" + b"\x00" * 32)
    assert err.value.offset == 0


def test_png_truncated_reports_byte_offset():
    good = encode_png(Raster8.from_array(np.zeros((4, 4, 3), dtype=np.uint8)))
    with pytest.raises(ImageFormatError) as err:
        decode_png(good[:30])
    assert isinstance(err.value.offset, int)
    assert err.value.offset > 0


def test_png_corrupt_crc_detected():
    good = bytearray(encode_png(Raster8.from_array(np.full((2, 2, 3), 7, np.uint8))))
    good[-5] ^= 0xFF  # inside the IEND crc
    with pytest.raises(ImageFormatError):
        decode_png(bytes(good))


# ----- PGM codec -----


def test_single_white_pixel_pgm():
    raster = decode_pgm(b"P5\n1 1\n255\n\xff")
    assert (raster.width, raster.height, raster.channels) == (1, 1, 1)
    assert raster.data[0, 0, 0] == 255


def test_pgm_round_trip_with_comments():
    rng = np.random.default_rng(7)
    px = rng.integers(0, 256, (6, 13, 1), dtype=np.uint8)
    data = encode_pgm(Raster8.from_array(px))
    assert np.array_equal(decode_pgm(data).data, px)
    commented = b"P5\n# a comment line\n13 6\n# another\n255\n" + px.tobytes()
    assert np.array_equal(decode_pgm(commented).data, px)


def test_pgm_errors_carry_offsets():
    with pytest.raises(ImageFormatError) as err:
        decode_pgm(b"P6\n1 1\n255\n\xff")
    assert err.value.offset == 0
    with pytest.raises(ImageFormatError) as err:
        decode_pgm(b"P5\n1 x\n255\n\xff")
    assert err.value.offset == 5
    with pytest.raises(ImageFormatError):
        decode_pgm(b"P5\n2 2\n255\n\x00\x00")  # 2 of 4 pixel bytes


def test_pgm_rejects_other_maxval():
    with pytest.raises(ImageFormatError):
        decode_pgm(b"P5\n1 1\n65535\n\x00\x00")


# ----- masks and alpha -----


def test_split_alpha_thresholds_at_128():
    px = np.zeros((1, 3, 4), dtype=np.uint8)
    px[0, :, 3] = [0, 127, 128]
    rgb, mask = split_alpha(Raster8.from_array(px))
    assert rgb.channels == 3
    assert mask.tolist() == [[0.0, 0.0, 1.0]]


def test_mask_raster_round_trip():
    mask = box_mask(5, 5, 1, 4, 2, 5)
    back = mask_from_raster(raster_from_mask(mask))
    assert np.array_equal(back, mask)


# ----- value domain -----


def test_domain_endpoints():
    r = Raster8.from_array(np.array([[[0], [255], [128]]], dtype=np.uint8))
    v = to_diffusion_domain(r)
    assert v[0, 0, 0] == -1.0
    assert v[0, 1, 0] == 1.0
    assert v[0, 2, 0] == pytest.approx(128.0 / 127.5 - 1.0, abs=1e-15)


def test_domain_round_trip_identity_on_all_bytes():
    px = np.arange(256, dtype=np.uint8).reshape(16, 16, 1)
    back = from_diffusion_domain(to_diffusion_domain(Raster8.from_array(px)))
    assert np.array_equal(back.data, px)


def test_domain_quantization_error_bound():
    rng = np.random.default_rng(1)
    v = rng.uniform(-1, 1, (9, 9, 3))
    back = to_diffusion_domain(from_diffusion_domain(v))
    assert np.max(np.abs(back - v)) <= 0.5 / 127.5 + 1e-12


def test_from_domain_clamps():
    r = from_diffusion_domain(np.array([[[-3.0], [3.0]]]))
    assert r.data.ravel().tolist() == [0, 255]


# ----- blending -----


def test_blend_extremes_are_exact():
    rng = np.random.default_rng(5)
    fg = rng.uniform(-1, 1, (6, 6, 3))
    bg = rng.uniform(-1, 1, (6, 6, 3))
    assert np.array_equal(blend(fg, bg, np.zeros((6, 6))), bg)
    assert np.array_equal(blend(fg, bg, np.ones((6, 6))), fg)


def test_blend_checkerboard_hand_case():
    fg = np.full((2, 2, 1), 1.0)
    bg = np.full((2, 2, 1), -1.0)
    mask = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = blend(fg, bg, mask)
    assert out[:, :, 0].tolist() == [[1.0, -1.0], [-1.0, 1.0]]


def test_blend_midpoint():
    out = blend(np.ones((1, 1, 1)), -np.ones((1, 1, 1)), np.full((1, 1), 0.25))
    assert out[0, 0, 0] == pytest.approx(-0.5)


# ----- warps -----


def test_warp_identity_is_exact():
    rng = np.random.default_rng(8)
    img = rng.uniform(-1, 1, (7, 9, 3))
    out = warp_projective(img, ProjectiveTransform.identity())
    assert np.array_equal(out, img)


def test_warp_integer_translation_hand_case():
    # pure shift by one column; reflect border fills the vacated edge
    img = np.arange(16, dtype=np.float64).reshape(4, 4)
    m = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    out = warp_projective(img, ProjectiveTransform(m))
    # out(x) = in(x - 1); column 0 reflects to column 1
    expected = img[:, [1, 0, 1, 2]]
    assert np.allclose(out, expected, atol=1e-12)


def test_warp_then_inverse_recovers_smooth_interior():
    ys, xs = np.mgrid[0:16, 0:16]
    img = np.stack([np.sin(xs / 5.0), np.cos(ys / 7.0), xs * ys / 225.0], axis=-1)
    t = random_projective(16, 16, np.random.default_rng(2), jitter=0.05)
    back = warp_projective(warp_projective(img, t), t.inverse())
    err = np.abs(back - img)[2:-2, 2:-2]
    assert err.max() < 0.02


def test_warp_preserves_value_range():
    rng = np.random.default_rng(12)
    img = rng.uniform(-1, 1, (10, 10, 3))
    t = random_projective(10, 10, rng, jitter=0.2)
    out = warp_projective(img, t)
    assert out.min() >= img.min() - 1e-12
    assert out.max() <= img.max() + 1e-12


def test_warp_adjoint_inner_product_identity():
    rng = np.random.default_rng(21)
    for _ in range(5):
        x = rng.standard_normal((8, 11, 3))
        g = rng.standard_normal((8, 11, 3))
        t = random_projective(8, 11, rng, jitter=0.15)
        lhs = float(np.vdot(warp_projective(x, t), g))
        rhs = float(np.vdot(x, warp_adjoint(g, t)))
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_warp_mask_stays_binary():
    rng = np.random.default_rng(3)
    mask = box_mask(12, 12, 3, 9, 3, 9)
    out = warp_mask(mask, random_projective(12, 12, rng))
    assert set(np.unique(out)) <= {0.0, 1.0}


def test_homography_from_corners_maps_corners():
    src = [(0, 0), (9, 0), (9, 9), (0, 9)]
    dst = [(1, 0.5), (8, 1), (9.5, 8), (0, 9)]
    t = homography_from_corners(src, dst)
    for (x, y), (u, v) in zip(src, dst):
        p = t.matrix @ np.array([x, y, 1.0])
        assert p[0] / p[2] == pytest.approx(u, abs=1e-9)
        assert p[1] / p[2] == pytest.approx(v, abs=1e-9)


def test_singular_homography_rejected():
    with pytest.raises(ValueError):
        ProjectiveTransform(np.zeros((3, 3)))


def test_seeded_random_projective_is_reproducible():
    a = random_projective(8, 8, np.random.default_rng(5))
    b = random_projective(8, 8, np.random.default_rng(5))
    assert np.array_equal(a.matrix, b.matrix)


# ----- resize -----


def test_resize_same_size_identity():
    rng = np.random.default_rng(9)
    img = rng.uniform(-1, 1, (6, 6, 3))
    assert np.array_equal(resize(img, 6, 6), img)


def test_resize_constant_stays_constant():
    img = np.full((8, 12, 3), 0.3)
    out = resize(img, 5, 7)
    assert np.allclose(out, 0.3, atol=1e-12)


def test_area_resize_is_block_mean():
    img = np.arange(16, dtype=np.float64).reshape(4, 4, 1)
    out = resize(img, 2, 2, mode="area")
    assert out[:, :, 0].tolist() == [[2.5, 4.5], [10.5, 12.5]]
    with pytest.raises(ValueError):
        resize(img, 3, 3, mode="area")


def test_resize_adjoint_inner_product_identity():
    rng = np.random.default_rng(30)
    x = rng.standard_normal((9, 7, 3))
    g = rng.standard_normal((5, 4, 3))
    lhs = float(np.vdot(resize(x, 5, 4), g))
    rhs = float(np.vdot(x, resize_adjoint(g, 9, 7)))
    assert lhs == pytest.approx(rhs, abs=1e-10)


# ----- dilation -----


def test_dilate_radius_zero_is_identity():
    mask = box_mask(6, 6, 2, 4, 2, 4)
    out = dilate(mask, 0)
    assert np.array_equal(out, mask)
    assert out is not mask


def test_dilate_single_pixel_radius_one():
    mask = np.zeros((5, 5))
    mask[2, 2] = 1.0
    out = dilate(mask, 1)
    assert np.array_equal(out, box_mask(5, 5, 1, 4, 1, 4))


def test_dilate_radius_two_is_a_disc():
    mask = np.zeros((7, 7))
    mask[3, 3] = 1.0
    out = dilate(mask, 2)
    assert out[3, 1] == 1.0 and out[1, 3] == 1.0
    assert out[1, 1] == 0.0  # corner at distance sqrt(8) > 2.5
    assert out[2, 2] == 1.0


def test_dilate_is_monotone_and_extensive():
    rng = np.random.default_rng(14)
    mask = (rng.uniform(size=(10, 10)) > 0.8).astype(float)
    grown = dilate(mask, 1)
    assert np.all(grown >= mask)
    assert np.all(dilate(mask, 2) >= grown)


def test_dilate_rejects_negative_radius():
    with pytest.raises(ValueError):
        dilate(np.zeros((3, 3)), -1)

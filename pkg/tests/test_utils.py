"""Tests for parsing and image helpers."""

import numpy as np
import pytest
import torch

from screwsplat.config import DTYPE
from screwsplat.utils import load_png, parse_floats, parse_size, save_png, to_uint8


class TestParseSize:
    def test_square(self):
        assert parse_size("64x64") == (64, 64)

    def test_width_then_height(self):
        assert parse_size("128X96") == (128, 96)

    def test_whitespace(self):
        assert parse_size(" 32 x 16 ") == (32, 16)

    def test_invalid(self):
        with pytest.raises(ValueError):
            parse_size("64")

    def test_zero(self):
        with pytest.raises(ValueError):
            parse_size("0x64")


class TestParseFloats:
    def test_list(self):
        assert parse_floats("0.3,0.1") == [0.3, 0.1]

    def test_single(self):
        assert parse_floats("1.5") == [1.5]

    def test_empty(self):
        assert parse_floats("  ") == []

    def test_invalid(self):
        with pytest.raises(ValueError):
            parse_floats("a,b")


class TestImages:
    def test_to_uint8_rounds_and_clamps(self):
        image = torch.tensor([[[-0.5, 0.5, 2.0]]], dtype=DTYPE)
        assert to_uint8(image).tolist() == [[[0, 128, 255]]]

    def test_png_quantization(self, tmp_path):
        image = torch.rand(5, 7, 3, dtype=DTYPE, generator=torch.Generator().manual_seed(0))
        path = tmp_path / "image.png"
        save_png(image, path)
        loaded = load_png(path)
        assert loaded.shape == (5, 7, 3)
        assert loaded.dtype == DTYPE
        assert np.array_equal(to_uint8(loaded), to_uint8(image))
        assert float((loaded - image).abs().max()) <= 0.5 / 255 + 1e-12

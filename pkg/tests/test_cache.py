"""Tests for cache logic."""

import os

import pytest

from screwsplat.cache import ModelCache
from screwsplat.config import InitConfig
from screwsplat.splat_model import init_model, save_model


def write_model(path, seed=0):
    save_model(init_model(InitConfig(n_gaussians=5, n_revolute=1, n_prismatic=0), seed=seed), path)
    return path


class TestModelCache:
    def test_load_and_hit(self, tmp_path):
        path = write_model(tmp_path / "model.json")
        cache = ModelCache(max_size=4, ttl=60)
        first = cache.get(path)
        assert cache.get(str(path)) is first
        stats = cache.stats()
        assert stats["hits"] == 1
        assert stats["misses"] == 1
        assert stats["models"] == 1
        assert stats["gaussians"] == 5
        assert stats["screws"] == 1

    def test_stats_initial(self):
        stats = ModelCache().stats()
        assert stats == {"models": 0, "capacity": 8, "gaussians": 0, "screws": 0, "hits": 0, "misses": 0}

    def test_rewrite_invalidates(self, tmp_path):
        path = write_model(tmp_path / "model.json", seed=0)
        cache = ModelCache()
        first = cache.get(path)
        write_model(path, seed=1)
        stat = path.stat()
        os.utime(path, ns=(stat.st_atime_ns, stat.st_mtime_ns + 1_000_000_000))
        second = cache.get(path)
        assert second is not first
        assert cache.stats()["misses"] == 2

    def test_max_size(self, tmp_path):
        cache = ModelCache(max_size=2, ttl=60)
        for name in ("a", "b", "c"):
            cache.get(write_model(tmp_path / f"{name}.json"))
        assert cache.stats()["models"] == 2

    def test_clear(self, tmp_path):
        cache = ModelCache()
        cache.get(write_model(tmp_path / "model.json"))
        cache.clear()
        assert cache.stats()["models"] == 0

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ModelCache().get(tmp_path / "absent.json")

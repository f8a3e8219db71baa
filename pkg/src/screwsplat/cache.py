"""In-memory TTL cache for loaded models."""

from pathlib import Path

from cachetools import TTLCache

from screwsplat.splat_model import ArticulatedSplatModel, load_model


class ModelCache:
    def __init__(self, max_size: int = 8, ttl: int = 600):
        self._cache: TTLCache = TTLCache(maxsize=max_size, ttl=ttl)
        self._hits = 0
        self._misses = 0

    def _key(self, path: Path) -> str:
        # a rewritten file gets a new key
        return f"{path.resolve()}:{path.stat().st_mtime_ns}"

    def get(self, path: str | Path) -> ArticulatedSplatModel:
        """Return the model stored at path, loading it on a miss."""
        path = Path(path)
        key = self._key(path)
        model = self._cache.get(key)
        if model is not None:
            self._hits += 1
            return model
        self._misses += 1
        model = load_model(path)
        self._cache[key] = model
        return model

    def clear(self) -> None:
        self._cache.clear()

    def stats(self) -> dict:
        """Cached model count plus the Gaussians and screws they hold."""
        models = list(self._cache.values())
        return {
            "models": len(models),
            "capacity": self._cache.maxsize,
            "gaussians": sum(m.n_gaussians for m in models),
            "screws": sum(m.n_screws for m in models),
            "hits": self._hits,
            "misses": self._misses,
        }

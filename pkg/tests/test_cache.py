from mmverify.cache import DiskCache, cache_key


class Clock:
    def __init__(self):
        self.now = 1000.0

    def __call__(self):
        return self.now


def test_round_trip_and_expiry(tmp_path):
    clock = Clock()
    cache = DiskCache(tmp_path, max_age=60, clock=clock)
    cache.put("fetch", "https://e.org/", b"<html>")
    assert cache.get("fetch", "https://e.org/") == b"<html>"
    clock.now += 61
    assert cache.get("fetch", "https://e.org/") is None
    assert (cache.hits, cache.misses) == (1, 1)


def test_per_entry_max_age(tmp_path):
    clock = Clock()
    cache = DiskCache(tmp_path, max_age=10, clock=clock)
    cache.put("model", "d", b"x", max_age=1000)
    clock.now += 500
    assert cache.get("model", "d") == b"x"


def test_kinds_do_not_collide(tmp_path):
    cache = DiskCache(tmp_path)
    cache.put("search", "q", b"hits")
    assert cache.get("fetch", "q") is None
    assert cache_key("search", "q") != cache_key("fetch", "q")


def test_corrupt_entry_is_a_miss(tmp_path):
    cache = DiskCache(tmp_path)
    cache.put("fetch", "u", b"x")
    path = next(tmp_path.rglob("*.json"))
    path.write_text("{broken")
    assert cache.get("fetch", "u") is None
